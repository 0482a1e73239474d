#pragma once

#include <cstddef>
#include <vector>

#include "vision/errors.hpp"

namespace vision {

/// Single-channel float image, row-major.
struct Plane {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> data;

  Plane() = default;
  Plane(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), data(w * h, fill) {}

  float& at(std::size_t x, std::size_t y) { return data[y * width + x]; }
  float at(std::size_t x, std::size_t y) const { return data[y * width + x]; }
  std::size_t size() const { return data.size(); }
  bool same_dims(const Plane& o) const { return width == o.width && height == o.height; }
  bool operator==(const Plane&) const = default;
};

/// Bilinear sample at continuous pixel coordinates, clamped to the border.
float sample_bilinear(const Plane& p, double x, double y);

/// Bilinear resize with pixel-center alignment (no prefiltering).
Plane resize_bilinear(const Plane& p, std::size_t width, std::size_t height);

/// Mean over non-overlapping factor x factor blocks; trailing remainder rows
/// and columns are dropped.
Plane box_downsample(const Plane& p, std::size_t factor);

/// Separable Gaussian filter with replicated borders; radius ceil(3 sigma).
Plane gaussian_filter(const Plane& p, double sigma);

/// Normalized 1-D Gaussian taps of length 2r+1.
std::vector<double> gaussian_kernel(double sigma, std::size_t radius);

/// Filter with an explicit separable kernel (replicated borders).
Plane separable_filter(const Plane& p, const std::vector<double>& kernel);

Plane crop(const Plane& p, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h);

}  // namespace vision
