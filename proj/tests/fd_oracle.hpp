#pragma once

// Central finite-difference oracle used by the gradient tests. Independent of
// the tape: it only perturbs values and re-evaluates a scalar function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "vision/tensor.hpp"

namespace vision::testing {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdRelTol = 1e-4;

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-5});
  return std::abs(analytic - numeric) / scale;
}

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares `analytic[i]` against (f(x+h e_i) - f(x-h e_i)) / 2h for every
/// element of `values` (perturbed in place and restored).
inline FdReport check_gradient(std::vector<double>& values, const std::vector<double>& analytic,
                               const std::function<double()>& f, double h = kFdStep) {
  FdReport r;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + h;
    const double up = f();
    values[i] = orig - h;
    const double down = f();
    values[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[i], numeric));
    ++r.checked;
  }
  return r;
}

inline Tensor4<double> random_tensor(Shape4 s, std::mt19937_64& rng, double lo = -1.0,
                                     double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor4<double> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

inline double weighted_sum(const Tensor4<double>& y, const Tensor4<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

}  // namespace vision::testing
