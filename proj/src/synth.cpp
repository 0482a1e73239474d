#include "vision/synth.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace vision {

namespace {

struct Wave {
  double fx, fy, phase, amp;
};
struct Rect {
  double x0, y0, x1, y1, value;
};
struct Disc {
  double cx, cy, r, vx, vy, base, stripe_freq, stripe_amp;
};

}  // namespace

Video synth_scene(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.width < 16 || cfg.height < 16 || cfg.frames < 2 || !(cfg.fps > 0.0)) {
    throw ConfigError("synth_scene needs at least 16x16 pixels, 2 frames and fps > 0");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * u01(rng); };

  std::vector<Wave> waves(10);
  for (auto& w : waves) {
    w = {uni(-0.08, 0.08), uni(-0.08, 0.08), uni(0.0, 2.0 * std::numbers::pi), uni(0.02, 0.06)};
  }
  const double span_w = cfg.width + cfg.max_pan * cfg.frames;
  const double span_h = cfg.height + cfg.max_pan * cfg.frames;
  std::vector<Rect> rects(24);
  for (auto& r : rects) {
    const double x = uni(-span_w, span_w), y = uni(-span_h, span_h);
    r = {x, y, x + uni(6.0, 30.0), y + uni(6.0, 30.0), uni(-0.3, 0.3)};
  }
  const double vx = uni(-cfg.max_pan, cfg.max_pan), vy = uni(-cfg.max_pan, cfg.max_pan);
  std::vector<Disc> discs(3);
  for (auto& d : discs) {
    d = {uni(0.0, cfg.width), uni(0.0, cfg.height), uni(8.0, 20.0),
         uni(-cfg.max_object_speed, cfg.max_object_speed),
         uni(-cfg.max_object_speed, cfg.max_object_speed), uni(0.15, 0.85), uni(0.1, 0.4),
         uni(0.05, 0.2)};
  }
  const double base = uni(0.35, 0.65);

  std::vector<Plane> planes;
  planes.reserve(cfg.frames);
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    Plane p(cfg.width, cfg.height);
    const double ox = vx * t, oy = vy * t;
    for (std::size_t y = 0; y < cfg.height; ++y) {
      for (std::size_t x = 0; x < cfg.width; ++x) {
        const double bx = x + ox, by = y + oy;
        double v = base;
        for (const auto& w : waves) {
          v += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * bx + w.fy * by) + w.phase);
        }
        for (const auto& r : rects) {
          if (bx >= r.x0 && bx < r.x1 && by >= r.y0 && by < r.y1) v += r.value;
        }
        for (const auto& d : discs) {
          const double dx = x - (d.cx + d.vx * t), dy = y - (d.cy + d.vy * t);
          if (dx * dx + dy * dy < d.r * d.r) {
            v = d.base + d.stripe_amp * std::sin(2.0 * std::numbers::pi * d.stripe_freq * (dx + dy));
          }
        }
        p.at(x, y) = static_cast<float>(v);
      }
    }
    planes.push_back(std::move(p));
  }
  return make_video(std::move(planes), cfg.fps);
}

}  // namespace vision
