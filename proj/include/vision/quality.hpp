#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vision/trainer.hpp"
#include "vision/video.hpp"
#include "vision/views.hpp"

namespace vision {

struct PatchConfig {
  std::size_t patch_size = 96;        // R
  double sharpness_fraction = 0.85;   // tau_s
  std::size_t local_window = 7;       // odd; Gaussian window for the contrast field
  double window_sigma = 7.0 / 6.0;

  void validate() const;
};

/// Non-overlapping R x R tiles, row-major; partial edge tiles are dropped.
struct PatchGrid {
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::size_t patch_size = 0;

  std::size_t count() const { return cols * rows; }
  std::size_t x0(std::size_t index) const { return (index % cols) * patch_size; }
  std::size_t y0(std::size_t index) const { return (index / cols) * patch_size; }
};

PatchGrid patch_grid(std::size_t width, std::size_t height, std::size_t patch_size);

/// Local standard deviation under a normalized Gaussian window (replicate borders).
std::vector<double> local_contrast(const Plane& p, std::size_t window, double sigma);

struct SharpnessMap {
  PatchGrid grid;
  std::vector<double> values;  // one per tile
};

/// Mean local contrast per tile. Throws DataError when the frame is smaller than R.
SharpnessMap patch_sharpness(const Frame& frame, const PatchConfig& config);

/// Tiles with sharpness >= fraction * max.
std::vector<std::size_t> sharp_patches(const SharpnessMap& map, double fraction);

enum class FeatureMode { fused, first_only, second_only };

std::string to_string(FeatureMode m);
FeatureMode parse_feature_mode(const std::string& s);

struct QualityConfig {
  PatchConfig patch;
  Tvl1Params flow;  // downscale 8 by default
  SamplingRate sampling;
  FeatureMode mode = FeatureMode::fused;
  double epsilon_rel = 1e-6;
  std::size_t threads = 1;

  void validate() const;
};

struct PatchLocation {
  std::size_t video = 0;
  std::size_t instant = 0;  // frame index t of the (t, t+1) pair
  std::size_t tile = 0;
};

/// Rows are samples.
struct PristineFeatures {
  Eigen::MatrixXd fd;
  Eigen::MatrixXd do_;
  std::vector<PatchLocation> kept;
};

/// Per-stream features of one instant for the given tiles, rows in tile order.
struct InstantFeatures {
  Eigen::MatrixXd fd;
  Eigen::MatrixXd do_;
};

InstantFeatures instant_features(const Video& video, std::size_t t, const EncoderSet& weights,
                                 const QualityConfig& config, const std::vector<std::size_t>& tiles);

/// Sharp frame patches of every sampled instant, with co-located difference
/// and flow patches. Throws DataError when nothing passes.
PristineFeatures select_pristine_patches(const std::vector<Video>& pristine,
                                         const EncoderSet& weights, const QualityConfig& config);

struct MvgModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // regularized
  std::uint64_t sample_count = 0;
  double epsilon = 0.0;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

/// Sample mean and (n-1) covariance plus epsilon_rel * trace / dim on the
/// diagonal (epsilon_rel itself when the trace is zero).
MvgModel fit_mvg(const Eigen::MatrixXd& samples, double epsilon_rel = 1e-6);

/// sqrt(d' ((S_r + S_d) / 2)^-1 d) with d = mu_r - mu_d, via Cholesky.
double mvg_distance(const MvgModel& pristine, const MvgModel& distorted);

struct Corpus {
  MvgModel fd;
  MvgModel do_;
  FeatureMode mode = FeatureMode::fused;
  std::vector<std::string> warnings;
};

Corpus build_corpus(const std::vector<Video>& pristine, const EncoderSet& weights,
                    const QualityConfig& config);

inline constexpr std::uint32_t kCorpusVersion = 1;

/// "VSNC", version u32, mode u32, then per stream (fd, do): tag string,
/// dim u32, sample_count u64, epsilon f64, mean f32 x dim, covariance f32
/// x dim*dim row-major.
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

struct VideoScore {
  std::vector<std::size_t> instants;  // t of each scored instant
  std::vector<double> q_fd;
  std::vector<double> q_do;
  double Q_fd = 0.0;
  double Q_do = 0.0;
  double vision = 0.0;
  /// Patch features averaged over tiles, then instants: [fd ; do].
  Eigen::VectorXd pooled_features;
};

/// All tiles of every sampled instant, a distorted MVG per instant and
/// stream, then mean pooling and the product.
VideoScore score_video(const Video& video, const EncoderSet& weights, const Corpus& corpus,
                       const QualityConfig& config);

struct ScoreRow {
  std::string video_id;
  VideoScore score;
};

/// video_id,Q_fd,Q_do,VISION
void write_scores(const std::vector<ScoreRow>& rows, const std::string& path);

}  // namespace vision
