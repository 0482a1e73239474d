#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vision/image.hpp"

namespace vision {

/// Grayscale frame with luminance in [0, 1].
struct Frame {
  Plane luma;
  std::int64_t timestamp_index = 0;

  std::size_t width() const { return luma.width; }
  std::size_t height() const { return luma.height; }
};

/// d = f_{t+1} - f_t, values in [-1, 1].
struct FrameDiff {
  Plane values;
};

/// Displacement maps in full-resolution pixels.
struct FlowField {
  Plane u;
  Plane v;
  double scale_factor = 1.0;
};

/// Interleaved RGB, 8-bit (max_value 255) or normalized (max_value 1).
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  float max_value = 255.0f;
  std::vector<float> data;
};

struct Tvl1Params {
  double lambda = 0.15;
  double theta = 0.3;
  double tau = 0.25;
  double pyramid_scale = 0.5;
  int pyramid_levels = 5;
  int warps = 5;
  int inner_iterations = 30;
  int downscale_factor = 8;
  std::size_t min_level_size = 16;

  void validate() const;
};

/// Relaxed TV-L1 objective after every inner iteration, grouped per level
/// (coarsest first) and per warp.
struct Tvl1Trace {
  struct Warp {
    std::size_t level = 0;
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> energy;
  };
  std::vector<Warp> warps;
  int downscale_used = 1;
};

Frame make_frame(Plane luma, std::int64_t index = 0);
Frame to_grayscale(const RgbImage& rgb, std::int64_t index = 0);
FrameDiff frame_difference(const Frame& f_t, const Frame& f_next);

/// Downsamples both frames by params.downscale_factor (reduced automatically
/// when the result would fall below min_level_size), runs coarse-to-fine
/// TV-L1 and returns flow upsampled and rescaled to full resolution.
FlowField tvl1_flow(const Frame& f_t, const Frame& f_next, const Tvl1Params& params = {},
                    Tvl1Trace* trace = nullptr);

/// Coarse-to-fine TV-L1 on the planes as given (no downscaling).
FlowField tvl1_pyramid(const Plane& i0, const Plane& i1, const Tvl1Params& params,
                       Tvl1Trace* trace = nullptr);

/// Sampling rate in pairs per second; all_frames takes every consecutive pair.
struct SamplingRate {
  double per_second = 1.0;
  bool all_frames = false;

  static SamplingRate every_frame() { return {1.0, true}; }
};

std::vector<std::pair<std::size_t, std::size_t>> sample_instants(std::size_t frame_count,
                                                                 double fps, SamplingRate rate);

void save_flow(const FlowField& flow, const std::string& path);
FlowField load_flow(const std::string& path);

}  // namespace vision
