#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vision/gradcore.hpp"

namespace vision {

inline constexpr std::size_t kMinEncoderInput = 16;

/// Architecture of one encoder: four blocks of
///   conv3x3 -> ReLU -> conv3x3 -> ReLU -> maxpool2 -> batchnorm
/// followed by global average pooling. The feature dimension is the width of
/// the last block.
///
/// Trainable parameter count, with c0 = input_channels and c1..c4 the block
/// widths:  sum_b [ 9*c(b-1)*cb + cb  +  9*cb*cb + cb  +  2*cb ].
/// Batch-norm running statistics (2*cb per block) are stored but not counted.
struct EncoderConfig {
  int input_channels = 1;
  std::array<int, 4> block_channels{32, 64, 128, 256};

  int feature_dim() const { return block_channels[3]; }
  void validate() const;
  std::uint64_t fingerprint() const;
  std::size_t parameter_count() const;
  std::string describe() const;

  bool operator==(const EncoderConfig&) const = default;
};

/// Named tensors of one encoder in canonical order. Per block b = 1..4:
///   block{b}.conv1.weight, block{b}.conv1.bias, block{b}.conv2.weight,
///   block{b}.conv2.bias, block{b}.bn.gamma, block{b}.bn.beta,
///   block{b}.bn.running_mean, block{b}.bn.running_var
template <typename T>
struct BasicEncoderWeights {
  EncoderConfig config;
  std::vector<Param<T>> tensors;

  std::vector<Param<T>*> trainable();
  Param<T>& at(std::size_t block, std::size_t slot) { return tensors[block * 8 + slot]; }
  const Param<T>& at(std::size_t block, std::size_t slot) const {
    return tensors[block * 8 + slot];
  }
  void zero_grad();

  template <typename U>
  BasicEncoderWeights<U> cast() const {
    BasicEncoderWeights<U> out;
    out.config = config;
    for (const auto& p : tensors) out.tensors.push_back(p.template cast<U>());
    return out;
  }
};

using EncoderWeights = BasicEncoderWeights<float>;

/// He-normal conv kernels (std sqrt(2 / (9 * in_channels))), zero biases,
/// gamma 1, beta 0, running mean 0 and running variance 1.
EncoderWeights init_weights(const EncoderConfig& config, std::uint64_t seed);

/// One recorded forward pass, kept alive for backpropagation.
template <typename T>
class EncoderPass {
 public:
  EncoderPass(BasicEncoderWeights<T>& weights, Tensor4<T> input, Mode mode);

  /// (batch, feature_dim, 1, 1)
  const Tensor4<T>& features() const { return tape_.value(out_); }
  /// Accumulates d(loss)/d(param) into the weights' gradient buffers.
  void backward(const Tensor4<T>& grad_features);

 private:
  Tape<T> tape_;
  Var out_;
};

/// Eval-mode encoding; large batches are processed in fixed-size chunks, which
/// does not change results because batch norm uses running statistics.
template <typename T>
Tensor4<T> encode(const BasicEncoderWeights<T>& weights, const Tensor4<T>& input);

/// Train- or eval-mode encoding without keeping the tape. Train mode updates
/// the batch-norm running statistics.
template <typename T>
Tensor4<T> encode(BasicEncoderWeights<T>& weights, const Tensor4<T>& input, Mode mode);

inline constexpr std::uint32_t kWeightsVersion = 1;

/// File layout: "VSNW", version u32, fingerprint u64, then per tensor in
/// canonical order: name (u32 length + bytes), rank u32, dims u32 x rank,
/// float32 little-endian payload.
void save_weights(const EncoderWeights& weights, const std::string& path);
EncoderWeights load_weights(const std::string& path);

}  // namespace vision
