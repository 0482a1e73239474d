#include "vision/views.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vision/binio.hpp"

namespace vision {

namespace {

// Intensities are scaled to [0,255] inside the solver; the usual lambda
// defaults are tuned for that range.
constexpr double kIntensityScale = 255.0;
constexpr double kGradIsZero = 1e-10;

std::string dims(const Plane& p) {
  return std::to_string(p.width) + "x" + std::to_string(p.height);
}

struct Grid {
  std::size_t w = 0, h = 0;
  std::vector<double> a;
  Grid() = default;
  Grid(std::size_t w_, std::size_t h_, double fill = 0.0) : w(w_), h(h_), a(w_ * h_, fill) {}
  double& operator()(std::size_t x, std::size_t y) { return a[y * w + x]; }
  double operator()(std::size_t x, std::size_t y) const { return a[y * w + x]; }
};

Grid to_grid(const Plane& p, double scale) {
  Grid g(p.width, p.height);
  for (std::size_t i = 0; i < p.size(); ++i) g.a[i] = scale * p.data[i];
  return g;
}

Plane to_plane(const Grid& g) {
  Plane p(g.w, g.h);
  for (std::size_t i = 0; i < g.a.size(); ++i) p.data[i] = static_cast<float>(g.a[i]);
  return p;
}

double bilinear(const Grid& g, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(g.w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(g.h - 1));
  const std::size_t x0 = static_cast<std::size_t>(x), y0 = static_cast<std::size_t>(y);
  const std::size_t x1 = std::min(x0 + 1, g.w - 1), y1 = std::min(y0 + 1, g.h - 1);
  const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  return (1.0 - fy) * ((1.0 - fx) * g(x0, y0) + fx * g(x1, y0)) +
         fy * ((1.0 - fx) * g(x0, y1) + fx * g(x1, y1));
}

// Pixel-center aligned bilinear resize.
Grid resize(const Grid& g, std::size_t w, std::size_t h) {
  Grid out(w, h);
  const double sx = static_cast<double>(g.w) / static_cast<double>(w);
  const double sy = static_cast<double>(g.h) / static_cast<double>(h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      out(x, y) = bilinear(g, (static_cast<double>(x) + 0.5) * sx - 0.5,
                           (static_cast<double>(y) + 0.5) * sy - 0.5);
    }
  }
  return out;
}

Grid smooth(const Grid& g, double sigma) {
  if (sigma <= 0.0) return g;
  const std::size_t r = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  const auto k = gaussian_kernel(sigma, r);
  const long R = static_cast<long>(r), W = static_cast<long>(g.w), H = static_cast<long>(g.h);
  Grid tmp(g.w, g.h), out(g.w, g.h);
  for (long y = 0; y < H; ++y) {
    for (long x = 0; x < W; ++x) {
      double s = 0.0;
      for (long i = -R; i <= R; ++i) s += k[i + R] * g(std::clamp(x + i, 0L, W - 1), y);
      tmp(x, y) = s;
    }
  }
  for (long y = 0; y < H; ++y) {
    for (long x = 0; x < W; ++x) {
      double s = 0.0;
      for (long i = -R; i <= R; ++i) s += k[i + R] * tmp(x, std::clamp(y + i, 0L, H - 1));
      out(x, y) = s;
    }
  }
  return out;
}

// Centered differences, one-sided at the border.
void centered_gradient(const Grid& g, Grid& gx, Grid& gy) {
  gx = Grid(g.w, g.h);
  gy = Grid(g.w, g.h);
  for (std::size_t y = 0; y < g.h; ++y) {
    for (std::size_t x = 0; x < g.w; ++x) {
      const std::size_t xl = x > 0 ? x - 1 : x, xr = x + 1 < g.w ? x + 1 : x;
      const std::size_t yu = y > 0 ? y - 1 : y, yd = y + 1 < g.h ? y + 1 : y;
      gx(x, y) = xr > xl ? (g(xr, y) - g(xl, y)) / static_cast<double>(xr - xl) : 0.0;
      gy(x, y) = yd > yu ? (g(x, yd) - g(x, yu)) / static_cast<double>(yd - yu) : 0.0;
    }
  }
}

// Forward differences with zero at the last row/column; divergence is its
// negative adjoint.
inline void forward_gradient(const Grid& u, std::size_t x, std::size_t y, double& gx, double& gy) {
  gx = x + 1 < u.w ? u(x + 1, y) - u(x, y) : 0.0;
  gy = y + 1 < u.h ? u(x, y + 1) - u(x, y) : 0.0;
}

inline double divergence(const Grid& px, const Grid& py, std::size_t x, std::size_t y) {
  double d = 0.0;
  if (x + 1 < px.w) d += px(x, y);
  if (x > 0) d -= px(x - 1, y);
  if (y + 1 < py.h) d += py(x, y);
  if (y > 0) d -= py(x, y - 1);
  return d;
}

double total_variation(const Grid& u) {
  double tv = 0.0;
  for (std::size_t y = 0; y < u.h; ++y) {
    for (std::size_t x = 0; x < u.w; ++x) {
      double gx, gy;
      forward_gradient(u, x, y, gx, gy);
      tv += std::sqrt(gx * gx + gy * gy);
    }
  }
  return tv;
}

struct LevelSolver {
  const Tvl1Params& prm;
  const Grid& i0;
  const Grid& i1;
  Grid u1, u2;

  void run(Tvl1Trace* trace, std::size_t level) {
    const std::size_t w = i0.w, h = i0.h, n = w * h;
    Grid i1x, i1y;
    centered_gradient(i1, i1x, i1y);
    Grid p11(w, h), p12(w, h), p21(w, h), p22(w, h);
    Grid v1(w, h), v2(w, h), c1(w, h), c2(w, h);
    Grid i1w(w, h), i1wx(w, h), i1wy(w, h), grad(w, h), rho_c(w, h);
    const double l_t = prm.lambda * prm.theta;
    const double taut = prm.tau / prm.theta;

    for (int warp = 0; warp < prm.warps; ++warp) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double sx = static_cast<double>(x) + u1(x, y);
          const double sy = static_cast<double>(y) + u2(x, y);
          i1w(x, y) = bilinear(i1, sx, sy);
          i1wx(x, y) = bilinear(i1x, sx, sy);
          i1wy(x, y) = bilinear(i1y, sx, sy);
        }
      }
      for (std::size_t k = 0; k < n; ++k) {
        grad.a[k] = i1wx.a[k] * i1wx.a[k] + i1wy.a[k] * i1wy.a[k];
        rho_c.a[k] = i1w.a[k] - i1wx.a[k] * u1.a[k] - i1wy.a[k] * u2.a[k] - i0.a[k];
      }

      double tv_u = total_variation(u1) + total_variation(u2);
      Tvl1Trace::Warp* rec = nullptr;
      if (trace) {
        trace->warps.push_back({level, w, h, {}});
        rec = &trace->warps.back();
      }

      for (int it = 0; it < prm.inner_iterations; ++it) {
        // pointwise thresholding of the linearized data term
        for (std::size_t k = 0; k < n; ++k) {
          const double rho = rho_c.a[k] + i1wx.a[k] * u1.a[k] + i1wy.a[k] * u2.a[k];
          double d1 = 0.0, d2 = 0.0;
          if (rho < -l_t * grad.a[k]) {
            d1 = l_t * i1wx.a[k];
            d2 = l_t * i1wy.a[k];
          } else if (rho > l_t * grad.a[k]) {
            d1 = -l_t * i1wx.a[k];
            d2 = -l_t * i1wy.a[k];
          } else if (grad.a[k] > kGradIsZero) {
            const double f = -rho / grad.a[k];
            d1 = f * i1wx.a[k];
            d2 = f * i1wy.a[k];
          }
          v1.a[k] = u1.a[k] + d1;
          v2.a[k] = u2.a[k] + d2;
        }
        // relaxed energy with the new v and the current u
        double coupling = 0.0, data = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double a = u1.a[k] - v1.a[k], b = u2.a[k] - v2.a[k];
          coupling += a * a + b * b;
          data += std::abs(rho_c.a[k] + i1wx.a[k] * v1.a[k] + i1wy.a[k] * v2.a[k]);
        }
        const double e_mid = tv_u + coupling / (2.0 * prm.theta) + prm.lambda * data;
        // primal candidate
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            c1(x, y) = v1(x, y) + prm.theta * divergence(p11, p12, x, y);
            c2(x, y) = v2(x, y) + prm.theta * divergence(p21, p22, x, y);
          }
        }
        double c_coupling = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double a = c1.a[k] - v1.a[k], b = c2.a[k] - v2.a[k];
          c_coupling += a * a + b * b;
        }
        const double c_tv = total_variation(c1) + total_variation(c2);
        const double e_new = c_tv + c_coupling / (2.0 * prm.theta) + prm.lambda * data;
        // a single dual step solves the ROF subproblem only approximately, so
        // the candidate is kept only if it does not raise the energy
        if (e_new <= e_mid) {
          std::swap(u1.a, c1.a);
          std::swap(u2.a, c2.a);
          tv_u = c_tv;
        }
        if (rec) rec->energy.push_back(std::min(e_new, e_mid));
        // dual update from the candidate (now in u if accepted)
        const Grid& g1 = e_new <= e_mid ? u1 : c1;
        const Grid& g2 = e_new <= e_mid ? u2 : c2;
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            double g1x, g1y, g2x, g2y;
            forward_gradient(g1, x, y, g1x, g1y);
            forward_gradient(g2, x, y, g2x, g2y);
            const double n1 = 1.0 + taut * std::sqrt(g1x * g1x + g1y * g1y);
            const double n2 = 1.0 + taut * std::sqrt(g2x * g2x + g2y * g2y);
            p11(x, y) = (p11(x, y) + taut * g1x) / n1;
            p12(x, y) = (p12(x, y) + taut * g1y) / n1;
            p21(x, y) = (p21(x, y) + taut * g2x) / n2;
            p22(x, y) = (p22(x, y) + taut * g2y) / n2;
          }
        }
      }
    }
  }
};

}  // namespace

void Tvl1Params::validate() const {
  if (!(lambda > 0.0) || !(theta > 0.0) || !(tau > 0.0)) {
    throw ConfigError("tvl1 lambda, theta and tau must be positive");
  }
  if (!(pyramid_scale > 0.0 && pyramid_scale < 1.0)) {
    throw ConfigError("tvl1 pyramid_scale must lie in (0,1)");
  }
  if (pyramid_levels < 1 || warps < 1 || inner_iterations < 1 || downscale_factor < 1) {
    throw ConfigError("tvl1 levels, warps, iterations and downscale factor must be positive");
  }
  if (min_level_size < 1) throw ConfigError("tvl1 min_level_size must be positive");
}

Frame make_frame(Plane luma, std::int64_t index) {
  if (luma.width == 0 || luma.height == 0) throw ShapeError("frame must be non-empty");
  if (luma.data.size() != luma.width * luma.height) throw ShapeError("frame buffer size mismatch");
  for (float& v : luma.data) v = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
  return Frame{std::move(luma), index};
}

Frame to_grayscale(const RgbImage& rgb, std::int64_t index) {
  if (rgb.channels != 3) {
    throw ShapeError("to_grayscale expects 3 channels, got " + std::to_string(rgb.channels));
  }
  if (rgb.data.size() != rgb.width * rgb.height * 3) throw ShapeError("rgb buffer size mismatch");
  if (!(rgb.max_value > 0.0f)) throw ShapeError("rgb max_value must be positive");
  Plane p(rgb.width, rgb.height);
  const double inv = 1.0 / rgb.max_value;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const float* px = &rgb.data[3 * i];
    p.data[i] = static_cast<float>((0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]) * inv);
  }
  return make_frame(std::move(p), index);
}

FrameDiff frame_difference(const Frame& f_t, const Frame& f_next) {
  if (!f_t.luma.same_dims(f_next.luma)) {
    throw ShapeError("frame_difference dims differ: " + dims(f_t.luma) + " vs " +
                     dims(f_next.luma));
  }
  FrameDiff d{Plane(f_t.width(), f_t.height())};
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    d.values.data[i] = f_next.luma.data[i] - f_t.luma.data[i];
  }
  return d;
}

FlowField tvl1_pyramid(const Plane& p0, const Plane& p1, const Tvl1Params& prm,
                       Tvl1Trace* trace) {
  prm.validate();
  if (!p0.same_dims(p1)) {
    throw ShapeError("tvl1 frame dims differ: " + dims(p0) + " vs " + dims(p1));
  }
  if (p0.width == 0 || p0.height == 0) throw ShapeError("tvl1 frames must be non-empty");

  // level 0 is the finest
  std::vector<Grid> py0{to_grid(p0, kIntensityScale)}, py1{to_grid(p1, kIntensityScale)};
  const double sigma = 0.6 * std::sqrt(1.0 / (prm.pyramid_scale * prm.pyramid_scale) - 1.0);
  while (static_cast<int>(py0.size()) < prm.pyramid_levels) {
    const Grid& last = py0.back();
    const auto nw = static_cast<std::size_t>(std::lround(last.w * prm.pyramid_scale));
    const auto nh = static_cast<std::size_t>(std::lround(last.h * prm.pyramid_scale));
    if (std::min(nw, nh) < prm.min_level_size) break;
    py0.push_back(resize(smooth(py0.back(), sigma), nw, nh));
    py1.push_back(resize(smooth(py1.back(), sigma), nw, nh));
  }

  Grid u1(py0.back().w, py0.back().h), u2(py0.back().w, py0.back().h);
  for (std::size_t l = py0.size(); l-- > 0;) {
    const Grid& i0 = py0[l];
    if (u1.w != i0.w || u1.h != i0.h) {
      const double rx = static_cast<double>(i0.w) / static_cast<double>(u1.w);
      const double ry = static_cast<double>(i0.h) / static_cast<double>(u1.h);
      u1 = resize(u1, i0.w, i0.h);
      u2 = resize(u2, i0.w, i0.h);
      for (double& x : u1.a) x *= rx;
      for (double& x : u2.a) x *= ry;
    }
    LevelSolver s{prm, i0, py1[l], std::move(u1), std::move(u2)};
    s.run(trace, l);
    u1 = std::move(s.u1);
    u2 = std::move(s.u2);
  }
  return FlowField{to_plane(u1), to_plane(u2), 1.0};
}

FlowField tvl1_flow(const Frame& f_t, const Frame& f_next, const Tvl1Params& prm,
                    Tvl1Trace* trace) {
  prm.validate();
  const Plane& a = f_t.luma;
  const Plane& b = f_next.luma;
  if (!a.same_dims(b)) throw ShapeError("tvl1 frame dims differ: " + dims(a) + " vs " + dims(b));
  std::size_t factor = static_cast<std::size_t>(prm.downscale_factor);
  while (factor > 1 && std::min(a.width, a.height) / factor < prm.min_level_size) --factor;
  if (trace) trace->downscale_used = static_cast<int>(factor);
  if (factor == 1) return tvl1_pyramid(a, b, prm, trace);

  FlowField coarse = tvl1_pyramid(box_downsample(a, factor), box_downsample(b, factor), prm, trace);
  // full-res pixel x maps to coarse coordinate (x + 0.5) / factor - 0.5
  FlowField out{Plane(a.width, a.height), Plane(a.width, a.height), static_cast<double>(factor)};
  const double f = static_cast<double>(factor);
  for (std::size_t y = 0; y < a.height; ++y) {
    const double cy = (static_cast<double>(y) + 0.5) / f - 0.5;
    for (std::size_t x = 0; x < a.width; ++x) {
      const double cx = (static_cast<double>(x) + 0.5) / f - 0.5;
      out.u.at(x, y) = static_cast<float>(f * sample_bilinear(coarse.u, cx, cy));
      out.v.at(x, y) = static_cast<float>(f * sample_bilinear(coarse.v, cx, cy));
    }
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> sample_instants(std::size_t frame_count,
                                                                 double fps, SamplingRate rate) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (frame_count < 2) return out;
  if (rate.all_frames) {
    for (std::size_t t = 0; t + 1 < frame_count; ++t) out.emplace_back(t, t + 1);
    return out;
  }
  if (!(fps > 0.0) || !(rate.per_second > 0.0)) {
    throw ConfigError("sample_instants needs positive fps and sampling rate");
  }
  const double interval = std::max(1.0, fps / rate.per_second);
  for (std::size_t i = 0;; ++i) {
    const auto t = static_cast<std::size_t>(std::floor(static_cast<double>(i) * interval + 1e-9));
    if (t + 1 >= frame_count) break;
    out.emplace_back(t, t + 1);
  }
  return out;
}

void save_flow(const FlowField& flow, const std::string& path) {
  if (!flow.u.same_dims(flow.v)) throw ShapeError("flow u/v dims differ");
  binio::Writer w(path);
  w.magic("VSNF");
  w.u32(static_cast<std::uint32_t>(flow.u.width));
  w.u32(static_cast<std::uint32_t>(flow.u.height));
  for (std::size_t i = 0; i < flow.u.size(); ++i) {
    w.f32(flow.u.data[i]);
    w.f32(flow.v.data[i]);
  }
  w.close();
}

FlowField load_flow(const std::string& path) {
  binio::Reader r(path);
  r.expect_magic("VSNF");
  const std::uint32_t w = r.u32("width"), h = r.u32("height");
  if (w == 0 || h == 0) throw FormatError(path + ": empty flow dims");
  FlowField f{Plane(w, h), Plane(w, h), 1.0};
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    f.u.data[i] = r.f32("flow u");
    f.v.data[i] = r.f32("flow v");
  }
  if (!r.at_end()) throw FormatError(path + ": trailing bytes after flow payload");
  return f;
}

}  // namespace vision
