#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace vision {

/// 1-based ranks; tied values share the mean of their ranks.
std::vector<double> average_ranks(const std::vector<double>& x);

/// Throws NumericError when either input is constant, ShapeError on length mismatch
/// or fewer than 3 points.
double plcc(const std::vector<double>& x, const std::vector<double>& y);
double srocc(const std::vector<double>& x, const std::vector<double>& y);

/// Q -> b2 + (b1 - b2) / (1 + exp(-(Q - b3) / b4))
struct LogisticParams {
  double b1 = 1.0;
  double b2 = 0.0;
  double b3 = 0.0;
  double b4 = 1.0;

  double operator()(double q) const;
};

struct LogisticFit {
  LogisticParams params;
  double mse = 0.0;
  bool converged = false;
  std::size_t evaluations = 0;
};

/// Derivative-free least squares (Nelder-Mead) from several starts: the
/// data-driven one with either sign of b4, and one on the near-linear part
/// of the curve matching the linear regression.
LogisticFit fit_logistic(const std::vector<double>& predicted, const std::vector<double>& subjective,
                         std::size_t max_evaluations = 20000);

struct NelderMeadResult {
  std::vector<double> x;
  double f = 0.0;
  bool converged = false;
  std::size_t evaluations = 0;
};

NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                             std::vector<double> start, const std::vector<double>& step,
                             std::size_t max_evaluations, double tolerance = 1e-12);

struct EvalReport {
  double srocc = 0.0;
  double plcc = 0.0;      // after the logistic remapping
  double raw_plcc = 0.0;  // before it
  LogisticFit logistic;
  std::size_t n_videos = 0;
};

EvalReport evaluate(const std::vector<double>& predicted, const std::vector<double>& subjective);

struct LinearEvalConfig {
  std::size_t splits = 100;
  double train_fraction = 0.8;
  double ridge_lambda = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LinearEvalResult {
  double median_srocc = 0.0;
  std::vector<double> split_srocc;
};

/// Rows of features are videos. Per split: standardize on the training part,
/// closed-form ridge, SROCC on the held-out part.
LinearEvalResult linear_eval(const Eigen::MatrixXd& features, const std::vector<double>& subjective,
                             const LinearEvalConfig& config = {});

/// The shuffled index order used by split `split` of a run seeded with `seed`.
std::vector<std::size_t> split_order(std::size_t n, std::uint64_t seed, std::size_t split);

}  // namespace vision
