#pragma once

#include <array>
#include <functional>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "vision/distort.hpp"
#include "vision/encoder.hpp"
#include "vision/views.hpp"

namespace vision {

struct TrainConfig {
  std::size_t scenes_per_batch = 8;     // S
  std::size_t versions_per_scene = 11;  // K
  double temperature = 0.1;
  std::size_t crop = 224;
  double learning_rate = 1e-4;
  std::size_t iterations = 5000;
  std::uint64_t seed = 0;
  bool random_crop = false;
  EncoderConfig encoder;  // input_channels is set per view
  Tvl1Params flow = training_flow_params();

  void validate() const;

  /// Training flow runs on the crop itself, without the 1/8 reduction.
  static Tvl1Params training_flow_params() {
    Tvl1Params p;
    p.downscale_factor = 1;
    return p;
  }
};

/// S*K view triplets; item s*K + k is version k of the s-th sampled scene.
struct ViewBatch {
  std::size_t scenes = 0;
  std::size_t versions = 0;
  Tensor4<float> frames;  // (S*K, 1, crop, crop)
  Tensor4<float> diffs;   // (S*K, 1, crop, crop)
  Tensor4<float> flows;   // (S*K, 2, crop, crop)
  std::vector<std::size_t> scene_indices;
  std::vector<std::size_t> timestamps;
  std::vector<std::pair<std::size_t, std::size_t>> crop_offsets;  // (x0, y0) per scene
};

/// Memoizes cropped flow fields, which dominate batch preparation.
class FlowCache {
 public:
  const FlowField& get(const Video& v, std::size_t scene, std::size_t version, std::size_t t,
                       std::size_t x0, std::size_t y0, std::size_t crop, const Tvl1Params& p);
  std::size_t size() const { return cache_.size(); }

 private:
  std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, std::size_t>, FlowField>
      cache_;
};

ViewBatch sample_batch(const std::vector<SceneSet>& scenes, const TrainConfig& config,
                       std::mt19937_64& rng, FlowCache* cache = nullptr);

/// exp(cos(a, b) / tau). Throws NumericError for a zero-norm input.
double similarity(std::span<const double> a, std::span<const double> b, double tau);

/// -log( h(anchor, c_pos) / sum_k h(anchor, c_k) ), evaluated in the log domain.
double contrastive_loss_one_anchor(std::span<const double> anchor,
                                   const std::vector<std::vector<double>>& candidates,
                                   std::size_t positive_index, double tau);

struct StreamLoss {
  double value = 0.0;
  std::vector<double> grad_a;  // d value / d a, same layout as a
  std::vector<double> grad_b;
};

/// Symmetric two-view loss over S scenes of K versions with D-dim features,
/// laid out [s][k][d]. Each scene's K items are each other's only negatives.
/// value = (1/SK) sum_{s,j} [ l(a_sj, b_s.) + l(b_sj, a_s.) ].
StreamLoss stream_loss(std::span<const double> a, std::span<const double> b, std::size_t scenes,
                       std::size_t versions, std::size_t dim, double tau);

struct LossRecord {
  std::size_t step = 0;
  double loss_fd = 0.0;
  double loss_do = 0.0;
};

/// g1: frames, g2: frame differences (stream f,d); g3: frame differences,
/// g4: optical flow (stream d,o).
struct EncoderSet {
  std::array<EncoderWeights, 4> encoders;

  EncoderWeights& g(std::size_t i) { return encoders[i - 1]; }
  const EncoderWeights& g(std::size_t i) const { return encoders[i - 1]; }
};

EncoderSet init_encoder_set(const EncoderConfig& base, std::uint64_t seed);

/// Writes g1.vsnw .. g4.vsnw into dir (created if missing).
void save_encoder_set(const EncoderSet& set, const std::string& dir);
/// Throws FormatError when files are missing or the encoders disagree.
EncoderSet load_encoder_set(const std::string& dir);

struct TrainResult {
  EncoderSet weights;
  std::vector<LossRecord> trace;
};

using StepCallback = std::function<void(const LossRecord&)>;

TrainResult train(const std::vector<SceneSet>& scenes, const TrainConfig& config,
                  const StepCallback& on_step = {});

/// (g_a(x_a) + g_b(x_b)) / 2, eval mode. Returns (N, D, 1, 1).
Tensor4<float> fused_features(const EncoderWeights& g_a, const EncoderWeights& g_b,
                              const Tensor4<float>& x_a, const Tensor4<float>& x_b);

void write_loss_trace(const std::vector<LossRecord>& trace, const std::string& path);

}  // namespace vision
