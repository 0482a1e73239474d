#pragma once

// Independent MVG oracles: random well-conditioned models and a distance
// through a cofactor inverse.

#include <cmath>
#include <random>

#include "vision/quality.hpp"

namespace vision::testing {

inline MvgModel random_model(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd a(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) a(i, j) = nd(rng);
  }
  MvgModel m;
  m.mean = Eigen::VectorXd(dim);
  for (std::size_t i = 0; i < dim; ++i) m.mean(i) = 3.0 * nd(rng);
  m.covariance = a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(dim, dim);
  m.covariance = 0.5 * (m.covariance + m.covariance.transpose()).eval();
  m.sample_count = 100;
  return m;
}

// Explicit inverse via cofactors over the adjugate; only sensible for tiny dims.
inline double det(const Eigen::MatrixXd& m) {
  const Eigen::Index n = m.rows();
  if (n == 1) return m(0, 0);
  double d = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    d += (j % 2 ? -1.0 : 1.0) * m(0, j) * det([&] {
      Eigen::MatrixXd minor(n - 1, n - 1);
      for (Eigen::Index r = 1; r < n; ++r) {
        for (Eigen::Index c = 0, cc = 0; c < n; ++c) {
          if (c != j) minor(r - 1, cc++) = m(r, c);
        }
      }
      return minor;
    }());
  }
  return d;
}

inline Eigen::MatrixXd adjugate_inverse(const Eigen::MatrixXd& m) {
  const Eigen::Index n = m.rows();
  Eigen::MatrixXd inv(n, n);
  if (n == 1) {
    inv(0, 0) = 1.0 / m(0, 0);
    return inv;
  }
  const double d = det(m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      Eigen::MatrixXd minor(n - 1, n - 1);
      for (Eigen::Index r = 0, rr = 0; r < n; ++r) {
        if (r == i) continue;
        for (Eigen::Index c = 0, cc = 0; c < n; ++c) {
          if (c != j) minor(rr, cc++) = m(r, c);
        }
        ++rr;
      }
      inv(j, i) = ((i + j) % 2 ? -1.0 : 1.0) * det(minor) / d;
    }
  }
  return inv;
}

inline double brute_distance(const MvgModel& a, const MvgModel& b) {
  const Eigen::VectorXd d = a.mean - b.mean;
  const Eigen::MatrixXd inv = adjugate_inverse(0.5 * (a.covariance + b.covariance));
  double q = 0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    for (Eigen::Index j = 0; j < d.size(); ++j) q += d(i) * inv(i, j) * d(j);
  }
  return std::sqrt(q);
}

}  // namespace vision::testing
