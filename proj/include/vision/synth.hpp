#pragma once

#include <cstdint>

#include "vision/video.hpp"

namespace vision {

/// Procedural test scenes: a panning background of random sinusoids and
/// hard-edged rectangles, plus a few textured discs with their own motion.
struct SynthConfig {
  std::size_t width = 128;
  std::size_t height = 128;
  std::size_t frames = 40;
  double fps = 4.0;
  double max_pan = 1.5;     // px per frame
  double max_object_speed = 3.0;
};

Video synth_scene(const SynthConfig& cfg, std::uint64_t seed);

}  // namespace vision
