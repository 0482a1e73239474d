#include "vision/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "vision/errors.hpp"
#include "vision/seed.hpp"

namespace vision {

namespace {

void check_pair(const std::vector<double>& x, const std::vector<double>& y, const char* what) {
  if (x.size() != y.size()) {
    throw ShapeError(std::string(what) + ": lengths differ (" + std::to_string(x.size()) + " vs " +
                     std::to_string(y.size()) + ")");
  }
  if (x.size() < 3) throw ShapeError(std::string(what) + " needs at least 3 points");
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double stddev(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

double plcc(const std::vector<double>& x, const std::vector<double>& y) {
  check_pair(x, y, "plcc");
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericError("plcc: non-finite input");
  }
  for (double v : y) {
    if (!std::isfinite(v)) throw NumericError("plcc: non-finite input");
  }
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericError("correlation undefined for a constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double srocc(const std::vector<double>& x, const std::vector<double>& y) {
  check_pair(x, y, "srocc");
  return plcc(average_ranks(x), average_ranks(y));
}

double LogisticParams::operator()(double q) const {
  return b2 + (b1 - b2) / (1.0 + std::exp(-(q - b3) / b4));
}

NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                             std::vector<double> start, const std::vector<double>& step,
                             std::size_t max_evaluations, double tolerance) {
  const std::size_t n = start.size();
  std::vector<std::vector<double>> s(n + 1, start);
  for (std::size_t i = 0; i < n; ++i) s[i + 1][i] += step[i];
  std::vector<double> fv(n + 1);
  NelderMeadResult r;
  auto eval = [&](const std::vector<double>& x) {
    ++r.evaluations;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  for (std::size_t i = 0; i <= n; ++i) fv[i] = eval(s[i]);

  std::vector<std::size_t> order(n + 1);
  while (r.evaluations < max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    const std::size_t best = order[0], worst = order[n], second = order[n - 1];
    double size = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
      for (std::size_t d = 0; d < n; ++d) {
        size = std::max(size, std::abs(s[i][d] - s[best][d]) / (1.0 + std::abs(s[best][d])));
      }
    }
    if (fv[worst] - fv[best] <= tolerance * (std::abs(fv[best]) + tolerance) && size <= 1e-9) {
      r.converged = true;
      break;
    }
    std::vector<double> c(n, 0.0);
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == worst) continue;
      for (std::size_t d = 0; d < n; ++d) c[d] += s[i][d] / static_cast<double>(n);
    }
    auto along = [&](double t) {
      std::vector<double> x(n);
      for (std::size_t d = 0; d < n; ++d) x[d] = c[d] + t * (s[worst][d] - c[d]);
      return x;
    };
    const auto xr = along(-1.0);
    const double fr = eval(xr);
    if (fr < fv[best]) {
      const auto xe = along(-2.0);
      const double fe = eval(xe);
      if (fe < fr) {
        s[worst] = xe, fv[worst] = fe;
      } else {
        s[worst] = xr, fv[worst] = fr;
      }
      continue;
    }
    if (fr < fv[second]) {
      s[worst] = xr, fv[worst] = fr;
      continue;
    }
    const auto xc = fr < fv[worst] ? along(-0.5) : along(0.5);
    const double fc = eval(xc);
    if (fc < std::min(fr, fv[worst])) {
      s[worst] = xc, fv[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == best) continue;
      for (std::size_t d = 0; d < n; ++d) s[i][d] = s[best][d] + 0.5 * (s[i][d] - s[best][d]);
      fv[i] = eval(s[i]);
    }
  }
  const auto it = std::min_element(fv.begin(), fv.end());
  r.x = s[static_cast<std::size_t>(it - fv.begin())];
  r.f = *it;
  return r;
}

LogisticFit fit_logistic(const std::vector<double>& q, const std::vector<double>& mos,
                         std::size_t max_evaluations) {
  if (q.size() != mos.size()) throw ShapeError("fit_logistic: lengths differ");
  if (q.size() < 5) throw ShapeError("fit_logistic needs at least 5 points");
  const double sq = stddev(q);
  if (!(sq > 0.0)) throw NumericError("fit_logistic: constant predictions");
  const double n = static_cast<double>(q.size());

  auto mse = [&](const std::vector<double>& b) {
    if (b[3] == 0.0) return std::numeric_limits<double>::infinity();
    const LogisticParams p{b[0], b[1], b[2], b[3]};
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double e = p(q[i]) - mos[i];
      s += e * e;
    }
    return s / n;
  };

  const double hi = *std::max_element(mos.begin(), mos.end());
  const double lo = *std::min_element(mos.begin(), mos.end());
  const double span_mos = std::max(hi - lo, 1e-12);
  const double mq = median(q);

  // least-squares line for the near-linear start
  const double qm = mean(q), ym = mean(mos);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    sxy += (q[i] - qm) * (mos[i] - ym);
    sxx += (q[i] - qm) * (q[i] - qm);
  }
  const double slope = sxy / sxx;
  const double q_span = *std::max_element(q.begin(), q.end()) - *std::min_element(q.begin(), q.end());
  const double wide = 1e3 * q_span;
  const double half = 2.0 * slope * wide;  // (b1 - b2) / 2 so that the centre slope matches
  const double centre = ym;

  const std::vector<std::vector<double>> starts = {
      {hi, lo, mq, sq},
      {hi, lo, mq, -sq},
      {centre + half, centre - half, qm, wide},
  };
  LogisticFit best;
  best.mse = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const auto& x0 = starts[k];
    const std::vector<double> step = {0.1 * span_mos + 0.1 * std::abs(x0[0] - x0[1]),
                                      0.1 * span_mos + 0.1 * std::abs(x0[0] - x0[1]), 0.1 * sq,
                                      0.1 * std::abs(x0[3])};
    NelderMeadResult r = nelder_mead(mse, x0, step, max_evaluations / (2 * starts.size()));
    // one restart from the optimum shakes off a collapsed simplex
    std::vector<double> step2(4);
    for (std::size_t d = 0; d < 4; ++d) step2[d] = 0.05 * (std::abs(r.x[d]) + 1e-3 * step[d] + 1e-12);
    const NelderMeadResult r2 = nelder_mead(mse, r.x, step2, max_evaluations / (2 * starts.size()));
    const std::size_t evals = r.evaluations + r2.evaluations;
    if (r2.f <= r.f) r = r2;
    r.evaluations = evals;
    best.evaluations += r.evaluations;
    if (r.f < best.mse) {
      best.mse = r.f;
      best.params = {r.x[0], r.x[1], r.x[2], r.x[3]};
      best.converged = r2.converged;
    }
  }
  return best;
}

EvalReport evaluate(const std::vector<double>& predicted, const std::vector<double>& subjective) {
  EvalReport rep;
  rep.n_videos = predicted.size();
  rep.srocc = srocc(predicted, subjective);
  rep.raw_plcc = plcc(predicted, subjective);
  rep.logistic = fit_logistic(predicted, subjective);
  std::vector<double> mapped(predicted.size());
  for (std::size_t i = 0; i < mapped.size(); ++i) mapped[i] = rep.logistic.params(predicted[i]);
  rep.plcc = plcc(mapped, subjective);
  return rep;
}

void LinearEvalConfig::validate() const {
  if (splits == 0) throw ConfigError("linear_eval needs at least one split");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  if (!(ridge_lambda > 0.0)) throw ConfigError("ridge lambda must be positive");
}

std::vector<std::size_t> split_order(std::size_t n, std::uint64_t seed, std::size_t split) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, split));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

LinearEvalResult linear_eval(const Eigen::MatrixXd& features, const std::vector<double>& y,
                             const LinearEvalConfig& config) {
  config.validate();
  const std::size_t n = static_cast<std::size_t>(features.rows());
  const Eigen::Index p = features.cols();
  if (y.size() != n) throw ShapeError("linear_eval: feature rows and scores differ in count");
  if (n < 10) throw ShapeError("linear_eval needs at least 10 videos");
  if (!features.allFinite()) throw NumericError("linear_eval: non-finite feature");
  const std::size_t n_train = static_cast<std::size_t>(std::llround(config.train_fraction * n));
  if (n_train < 2 || n - n_train < 3) throw ConfigError("train_fraction leaves too few videos on one side");

  LinearEvalResult res;
  for (std::size_t s = 0; s < config.splits; ++s) {
    const auto order = split_order(n, config.seed, s);
    Eigen::MatrixXd xtr(static_cast<Eigen::Index>(n_train), p);
    Eigen::VectorXd ytr(static_cast<Eigen::Index>(n_train));
    for (std::size_t i = 0; i < n_train; ++i) {
      xtr.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(order[i]));
      ytr(static_cast<Eigen::Index>(i)) = y[order[i]];
    }
    const Eigen::RowVectorXd mu = xtr.colwise().mean();
    Eigen::RowVectorXd sd = ((xtr.rowwise() - mu).array().square().colwise().sum() /
                             static_cast<double>(n_train)).sqrt();
    for (Eigen::Index j = 0; j < p; ++j) {
      if (!(sd(j) > 0.0)) sd(j) = 1.0;
    }
    const Eigen::MatrixXd z = (xtr.rowwise() - mu).array().rowwise() / sd.array();
    const double ym = ytr.mean();
    const Eigen::MatrixXd a = z.transpose() * z + config.ridge_lambda * Eigen::MatrixXd::Identity(p, p);
    const Eigen::VectorXd w = a.llt().solve(z.transpose() * (ytr.array() - ym).matrix());

    std::vector<double> pred, truth;
    for (std::size_t i = n_train; i < n; ++i) {
      const Eigen::RowVectorXd zi =
          (features.row(static_cast<Eigen::Index>(order[i])) - mu).array() / sd.array();
      pred.push_back(ym + zi.dot(w));
      truth.push_back(y[order[i]]);
    }
    double r = 0.0;
    try {
      r = srocc(pred, truth);
    } catch (const NumericError&) {
      r = 0.0;  // constant predictions or scores on this split
    }
    res.split_srocc.push_back(r);
  }
  res.median_srocc = median(res.split_srocc);
  return res;
}

}  // namespace vision
