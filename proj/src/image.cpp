#include "vision/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vision {

float sample_bilinear(const Plane& p, double x, double y) {
  const double maxx = static_cast<double>(p.width - 1), maxy = static_cast<double>(p.height - 1);
  x = std::clamp(x, 0.0, maxx);
  y = std::clamp(y, 0.0, maxy);
  const std::size_t x0 = static_cast<std::size_t>(x), y0 = static_cast<std::size_t>(y);
  const std::size_t x1 = std::min(x0 + 1, p.width - 1), y1 = std::min(y0 + 1, p.height - 1);
  const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  const double top = (1.0 - fx) * p.at(x0, y0) + fx * p.at(x1, y0);
  const double bot = (1.0 - fx) * p.at(x0, y1) + fx * p.at(x1, y1);
  return static_cast<float>((1.0 - fy) * top + fy * bot);
}

Plane resize_bilinear(const Plane& p, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) throw ShapeError("resize target must be non-empty");
  if (width == p.width && height == p.height) return p;
  Plane out(width, height);
  const double sx = static_cast<double>(p.width) / static_cast<double>(width);
  const double sy = static_cast<double>(p.height) / static_cast<double>(height);
  for (std::size_t y = 0; y < height; ++y) {
    const double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
    for (std::size_t x = 0; x < width; ++x) {
      out.at(x, y) = sample_bilinear(p, (static_cast<double>(x) + 0.5) * sx - 0.5, src_y);
    }
  }
  return out;
}

Plane box_downsample(const Plane& p, std::size_t factor) {
  if (factor == 0) throw ShapeError("downsample factor must be positive");
  if (factor == 1) return p;
  const std::size_t w = p.width / factor, h = p.height / factor;
  if (w == 0 || h == 0) {
    throw ShapeError("plane " + std::to_string(p.width) + "x" + std::to_string(p.height) +
                     " too small for downsample factor " + std::to_string(factor));
  }
  Plane out(w, h);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (std::size_t dy = 0; dy < factor; ++dy) {
        for (std::size_t dx = 0; dx < factor; ++dx) s += p.at(x * factor + dx, y * factor + dy);
      }
      out.at(x, y) = static_cast<float>(s * inv);
    }
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma, std::size_t radius) {
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-0.5 * d * d / (sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

Plane separable_filter(const Plane& p, const std::vector<double>& kernel) {
  const long r = static_cast<long>(kernel.size() / 2);
  const long w = static_cast<long>(p.width), h = static_cast<long>(p.height);
  Plane tmp(p.width, p.height), out(p.width, p.height);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double s = 0.0;
      for (long k = -r; k <= r; ++k) {
        s += kernel[k + r] * p.at(std::clamp(x + k, 0L, w - 1), y);
      }
      tmp.at(x, y) = static_cast<float>(s);
    }
  }
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double s = 0.0;
      for (long k = -r; k <= r; ++k) {
        s += kernel[k + r] * tmp.at(x, std::clamp(y + k, 0L, h - 1));
      }
      out.at(x, y) = static_cast<float>(s);
    }
  }
  return out;
}

Plane gaussian_filter(const Plane& p, double sigma) {
  if (sigma < 0.0) throw ShapeError("gaussian sigma must be non-negative");
  if (sigma == 0.0) return p;
  const std::size_t radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  return separable_filter(p, gaussian_kernel(sigma, radius));
}

Plane crop(const Plane& p, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  if (x0 + w > p.width || y0 + h > p.height) {
    throw ShapeError("crop window exceeds plane bounds");
  }
  Plane out(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    std::copy(p.data.begin() + (y0 + y) * p.width + x0,
              p.data.begin() + (y0 + y) * p.width + x0 + w, out.data.begin() + y * w);
  }
  return out;
}

}  // namespace vision
