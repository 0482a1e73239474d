#pragma once

// Minimal reverse-mode engine covering exactly the layer set the encoder
// needs. A Tape records one forward pass; backward() replays it in reverse and
// accumulates into Param::grad. One tape per thread; tapes are not shareable.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vision/tensor.hpp"

namespace vision {

enum class Mode { train, eval };

/// A named trainable (or state) tensor with a same-shaped gradient buffer.
/// `rank` is the logical rank used for serialization: 4 for conv kernels
/// (out, in, kh, kw), 1 for per-channel vectors stored as (C,1,1,1).
template <typename T>
struct Param {
  std::string name;
  Tensor4<T> value;
  Tensor4<T> grad;
  int rank = 4;
  bool trainable = true;

  Param() = default;
  Param(std::string name_, Tensor4<T> value_, int rank_, bool trainable_ = true)
      : name(std::move(name_)),
        value(std::move(value_)),
        grad(value.shape(), T{0}),
        rank(rank_),
        trainable(trainable_) {}

  void zero_grad() { grad.fill(T{0}); }

  template <typename U>
  Param<U> cast() const {
    return Param<U>(name, value.template cast<U>(), rank, trainable);
  }
};

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Constant leaf. With `requires_grad` its gradient is available via grad().
  Var input(Tensor4<T> value, bool requires_grad = false);
  /// Leaf bound to a parameter; backward() adds into `p.grad`.
  Var param(Param<T>& p);

  /// 3x3 cross-correlation, stride 1, replicate-border padding.
  /// weight (Cout, Cin, 3, 3), bias (Cout,1,1,1).
  Var conv2d(Var x, Var weight, Var bias, int padding = 1);
  Var relu(Var x);
  /// 2x2 stride-2 max pooling; a trailing odd row/column is dropped.
  Var maxpool2(Var x);
  /// Per-channel normalization over (batch, height, width). In train mode the
  /// running statistics are updated in place (momentum 0.1, unbiased variance).
  Var batchnorm(Var x, Var gamma, Var beta, Param<T>& running_mean, Param<T>& running_var,
                Mode mode);
  /// (N, C, H, W) -> (N, C, 1, 1)
  Var global_avg_pool(Var x);
  /// Sum of all elements -> (1,1,1,1)
  Var sum(Var x);

  const Tensor4<T>& value(Var v) const;
  const Tensor4<T>& grad(Var v) const;

  /// Backpropagate from a single-element output with seed 1.
  void backward(Var output);
  /// Backpropagate from `output` with an explicit upstream gradient.
  void backward(Var output, const Tensor4<T>& seed);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor4<T> value;
    Tensor4<T> grad;
    bool requires_grad = false;
    Param<T>* param = nullptr;
    std::function<void(Tape&, std::size_t)> back;
    std::vector<T> saved;               // batchnorm: xhat then inv std
    std::vector<std::size_t> indices;  // maxpool: argmax offsets
  };

  Node& node(Var v);
  const Node& node(Var v) const;
  Tensor4<T>& grad_buffer(std::size_t id);
  Var push(Node n);

  std::vector<Node> nodes_;
};

/// Adam optimizer state. Moment arrays are allocated on the first step to the
/// parameter shapes and must match them afterwards.
template <typename T>
struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step_count = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

/// One bias-corrected Adam update over `params`, then clears their gradients.
template <typename T>
void adam_step(std::span<Param<T>* const> params, AdamState<T>& state);

}  // namespace vision
