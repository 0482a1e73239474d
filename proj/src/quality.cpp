#include "vision/quality.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "vision/binio.hpp"
#include "vision/errors.hpp"
#include "vision/textfmt.hpp"

namespace vision {

namespace {

// 1-D pass with replicated borders.
void filter_pass(const std::vector<double>& in, std::vector<double>& out, std::size_t w,
                 std::size_t h, const std::vector<double>& k, bool horizontal) {
  const long r = static_cast<long>(k.size() / 2);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long j = -r; j <= r; ++j) {
        long xx = static_cast<long>(x), yy = static_cast<long>(y);
        if (horizontal) {
          xx = std::clamp(xx + j, 0L, static_cast<long>(w) - 1);
        } else {
          yy = std::clamp(yy + j, 0L, static_cast<long>(h) - 1);
        }
        acc += k[static_cast<std::size_t>(j + r)] * in[static_cast<std::size_t>(yy) * w + xx];
      }
      out[y * w + x] = acc;
    }
  }
}

std::vector<double> smooth(const std::vector<double>& in, std::size_t w, std::size_t h,
                           const std::vector<double>& k) {
  std::vector<double> tmp(in.size()), out(in.size());
  filter_pass(in, tmp, w, h, k, true);
  filter_pass(tmp, out, w, h, k, false);
  return out;
}

void copy_tile(const Plane& p, std::size_t x0, std::size_t y0, std::size_t r, float* dst) {
  for (std::size_t y = 0; y < r; ++y) {
    const float* src = p.data.data() + (y0 + y) * p.width + x0;
    std::copy(src, src + r, dst + y * r);
  }
}

Eigen::MatrixXd to_rows(const Tensor4<float>& z) {
  const Shape4 s = z.shape();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(s.n), static_cast<Eigen::Index>(s.c));
  for (std::size_t i = 0; i < s.n; ++i) {
    for (std::size_t d = 0; d < s.c; ++d) m(i, d) = z[i * s.c + d];
  }
  return m;
}

Eigen::MatrixXd mean_rows(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return 0.5 * (a + b);
}

// Runs job(i) for i in [0, n) on up to `threads` workers; job writes to its own slot.
template <typename F>
void for_each_index(std::size_t n, std::size_t threads, F job) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) job(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void write_model(binio::Writer& w, const std::string& tag, const MvgModel& m) {
  w.str(tag);
  w.u32(static_cast<std::uint32_t>(m.dim()));
  w.u64(m.sample_count);
  w.f64(m.epsilon);
  for (Eigen::Index i = 0; i < m.mean.size(); ++i) w.f32(static_cast<float>(m.mean(i)));
  for (Eigen::Index i = 0; i < m.covariance.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.covariance.cols(); ++j) {
      w.f32(static_cast<float>(m.covariance(i, j)));
    }
  }
}

MvgModel read_model(binio::Reader& r, const std::string& tag) {
  const std::string got = r.str("stream tag", 16);
  if (got != tag) throw FormatError(r.path() + ": expected stream \"" + tag + "\", got \"" + got + "\"");
  const std::uint32_t dim = r.u32("dim");
  if (dim == 0 || dim > 4096) throw FormatError(r.path() + ": implausible dim " + std::to_string(dim));
  MvgModel m;
  m.sample_count = r.u64("sample_count");
  m.epsilon = r.f64("epsilon");
  m.mean.resize(dim);
  for (std::uint32_t i = 0; i < dim; ++i) m.mean(i) = r.f32("mean");
  m.covariance.resize(dim, dim);
  for (std::uint32_t i = 0; i < dim; ++i) {
    for (std::uint32_t j = 0; j < dim; ++j) m.covariance(i, j) = r.f32("covariance");
  }
  if (m.sample_count < 2) throw FormatError(r.path() + ": stream " + tag + " has fewer than 2 samples");
  if (!m.covariance.isApprox(m.covariance.transpose(), 1e-6)) {
    throw FormatError(r.path() + ": stream " + tag + " covariance is not symmetric");
  }
  if (m.covariance.llt().info() != Eigen::Success) {
    throw FormatError(r.path() + ": stream " + tag + " covariance is not positive definite");
  }
  return m;
}

}  // namespace

void PatchConfig::validate() const {
  if (patch_size < kMinEncoderInput) {
    throw ConfigError("patch_size must be at least " + std::to_string(kMinEncoderInput));
  }
  if (!(sharpness_fraction > 0.0 && sharpness_fraction <= 1.0)) {
    throw ConfigError("sharpness_fraction must lie in (0, 1]");
  }
  if (local_window < 3 || local_window % 2 == 0) throw ConfigError("local_window must be odd and >= 3");
  if (!(window_sigma > 0.0)) throw ConfigError("window_sigma must be positive");
}

void QualityConfig::validate() const {
  patch.validate();
  flow.validate();
  if (!sampling.all_frames && !(sampling.per_second > 0.0)) {
    throw ConfigError("sampling rate must be positive");
  }
  if (!(epsilon_rel > 0.0)) throw ConfigError("epsilon_rel must be positive");
  if (threads == 0) throw ConfigError("threads must be at least 1");
}

std::string to_string(FeatureMode m) {
  switch (m) {
    case FeatureMode::fused: return "fused";
    case FeatureMode::first_only: return "first_only";
    case FeatureMode::second_only: return "second_only";
  }
  return "?";
}

FeatureMode parse_feature_mode(const std::string& s) {
  if (s == "fused") return FeatureMode::fused;
  if (s == "first_only") return FeatureMode::first_only;
  if (s == "second_only") return FeatureMode::second_only;
  throw ConfigError("unknown feature mode \"" + s + "\"");
}

PatchGrid patch_grid(std::size_t width, std::size_t height, std::size_t patch_size) {
  if (patch_size == 0) throw ConfigError("patch_size must be positive");
  return PatchGrid{width / patch_size, height / patch_size, patch_size};
}

std::vector<double> local_contrast(const Plane& p, std::size_t window, double sigma) {
  const auto k = gaussian_kernel(sigma, window / 2);
  std::vector<double> x(p.data.begin(), p.data.end()), x2(p.size());
  for (std::size_t i = 0; i < x.size(); ++i) x2[i] = x[i] * x[i];
  const auto mu = smooth(x, p.width, p.height, k);
  const auto m2 = smooth(x2, p.width, p.height, k);
  std::vector<double> sd(p.size());
  for (std::size_t i = 0; i < sd.size(); ++i) sd[i] = std::sqrt(std::max(0.0, m2[i] - mu[i] * mu[i]));
  return sd;
}

SharpnessMap patch_sharpness(const Frame& frame, const PatchConfig& config) {
  const Plane& p = frame.luma;
  const std::size_t r = config.patch_size;
  if (p.width < r || p.height < r) {
    throw DataError("frame " + std::to_string(p.width) + "x" + std::to_string(p.height) +
                    " is smaller than one " + std::to_string(r) + "-pixel patch; nothing to select");
  }
  SharpnessMap m;
  m.grid = patch_grid(p.width, p.height, r);
  const auto sd = local_contrast(p, config.local_window, config.window_sigma);
  m.values.assign(m.grid.count(), 0.0);
  for (std::size_t i = 0; i < m.grid.count(); ++i) {
    double acc = 0.0;
    for (std::size_t y = 0; y < r; ++y) {
      const double* row = sd.data() + (m.grid.y0(i) + y) * p.width + m.grid.x0(i);
      for (std::size_t x = 0; x < r; ++x) acc += row[x];
    }
    m.values[i] = acc / static_cast<double>(r * r);
  }
  return m;
}

std::vector<std::size_t> sharp_patches(const SharpnessMap& map, double fraction) {
  std::vector<std::size_t> out;
  if (map.values.empty()) return out;
  const double top = *std::max_element(map.values.begin(), map.values.end());
  const double cut = fraction * top;
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    if (map.values[i] >= cut) out.push_back(i);
  }
  return out;
}

InstantFeatures instant_features(const Video& video, std::size_t t, const EncoderSet& weights,
                                 const QualityConfig& config,
                                 const std::vector<std::size_t>& tiles) {
  if (t + 1 >= video.size()) throw DataError("instant " + std::to_string(t) + " has no next frame");
  const Frame& f = video.frames[t];
  const Frame& next = video.frames[t + 1];
  const std::size_t r = config.patch.patch_size;
  const PatchGrid grid = patch_grid(f.luma.width, f.luma.height, r);
  const std::size_t n = tiles.size(), plane = r * r;
  const bool need_frame = config.mode != FeatureMode::second_only;
  const bool need_flow = config.mode != FeatureMode::first_only;

  Tensor4<float> frames({n, 1, r, r}), diffs({n, 1, r, r}), flows({n, 2, r, r});
  const FrameDiff d = frame_difference(f, next);
  FlowField o;
  if (need_flow) o = tvl1_flow(f, next, config.flow);
  for (std::size_t i = 0; i < n; ++i) {
    if (tiles[i] >= grid.count()) throw ShapeError("tile index out of range");
    const std::size_t x0 = grid.x0(tiles[i]), y0 = grid.y0(tiles[i]);
    if (need_frame) copy_tile(f.luma, x0, y0, r, frames.data() + i * plane);
    copy_tile(d.values, x0, y0, r, diffs.data() + i * plane);
    if (need_flow) {
      copy_tile(o.u, x0, y0, r, flows.data() + (2 * i) * plane);
      copy_tile(o.v, x0, y0, r, flows.data() + (2 * i + 1) * plane);
    }
  }

  InstantFeatures out;
  switch (config.mode) {
    case FeatureMode::fused:
      out.fd = mean_rows(to_rows(encode(weights.g(1), frames)), to_rows(encode(weights.g(2), diffs)));
      out.do_ = mean_rows(to_rows(encode(weights.g(3), diffs)), to_rows(encode(weights.g(4), flows)));
      break;
    case FeatureMode::first_only:
      out.fd = to_rows(encode(weights.g(1), frames));
      out.do_ = to_rows(encode(weights.g(3), diffs));
      break;
    case FeatureMode::second_only:
      out.fd = to_rows(encode(weights.g(2), diffs));
      out.do_ = to_rows(encode(weights.g(4), flows));
      break;
  }
  return out;
}

PristineFeatures select_pristine_patches(const std::vector<Video>& pristine,
                                         const EncoderSet& weights, const QualityConfig& config) {
  config.validate();
  if (pristine.empty()) throw DataError("no pristine videos given");
  struct Job {
    std::size_t video, t;
  };
  std::vector<Job> jobs;
  for (std::size_t v = 0; v < pristine.size(); ++v) {
    pristine[v].validate();
    for (const auto& [t, t1] : sample_instants(pristine[v].size(), pristine[v].fps, config.sampling)) {
      (void)t1;
      jobs.push_back({v, t});
    }
  }
  std::vector<std::vector<std::size_t>> kept(jobs.size());
  std::vector<InstantFeatures> feats(jobs.size());
  for_each_index(jobs.size(), config.threads, [&](std::size_t j) {
    const Video& vid = pristine[jobs[j].video];
    const SharpnessMap m = patch_sharpness(vid.frames[jobs[j].t], config.patch);
    kept[j] = sharp_patches(m, config.patch.sharpness_fraction);
    if (!kept[j].empty()) feats[j] = instant_features(vid, jobs[j].t, weights, config, kept[j]);
  });

  std::size_t total = 0;
  for (const auto& k : kept) total += k.size();
  if (total == 0) {
    throw DataError("no pristine patch passed the sharpness test; lower sharpness_fraction");
  }
  PristineFeatures out;
  Eigen::Index d = 0;
  for (const auto& f : feats) d = std::max(d, f.fd.cols());
  out.fd.resize(static_cast<Eigen::Index>(total), d);
  out.do_.resize(static_cast<Eigen::Index>(total), d);
  Eigen::Index row = 0;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    for (std::size_t i = 0; i < kept[j].size(); ++i, ++row) {
      out.fd.row(row) = feats[j].fd.row(static_cast<Eigen::Index>(i));
      out.do_.row(row) = feats[j].do_.row(static_cast<Eigen::Index>(i));
      out.kept.push_back({jobs[j].video, jobs[j].t, kept[j][i]});
    }
  }
  return out;
}

MvgModel fit_mvg(const Eigen::MatrixXd& samples, double epsilon_rel) {
  const Eigen::Index n = samples.rows(), dim = samples.cols();
  if (n < 2) throw DataError("fit_mvg needs at least 2 samples, got " + std::to_string(n));
  if (dim < 1) throw ShapeError("fit_mvg: zero-dimensional samples");
  if (!(epsilon_rel > 0.0)) throw ConfigError("epsilon_rel must be positive");
  if (!samples.allFinite()) throw NumericError("fit_mvg: non-finite sample");

  // explicit loops keep the summation order fixed
  MvgModel m;
  m.sample_count = static_cast<std::uint64_t>(n);
  m.mean = Eigen::VectorXd::Zero(dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index d = 0; d < dim; ++d) m.mean(d) += samples(i, d);
  }
  m.mean /= static_cast<double>(n);
  m.covariance = Eigen::MatrixXd::Zero(dim, dim);
  std::vector<double> c(static_cast<std::size_t>(dim));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index d = 0; d < dim; ++d) c[d] = samples(i, d) - m.mean(d);
    for (Eigen::Index a = 0; a < dim; ++a) {
      for (Eigen::Index b = a; b < dim; ++b) m.covariance(a, b) += c[a] * c[b];
    }
  }
  for (Eigen::Index a = 0; a < dim; ++a) {
    for (Eigen::Index b = a; b < dim; ++b) {
      m.covariance(a, b) /= static_cast<double>(n - 1);
      m.covariance(b, a) = m.covariance(a, b);
    }
  }
  const double tr = m.covariance.trace();
  m.epsilon = tr > 0.0 ? epsilon_rel * tr / static_cast<double>(dim) : epsilon_rel;
  m.covariance.diagonal().array() += m.epsilon;
  if (m.covariance.llt().info() != Eigen::Success) {
    throw NumericError("fit_mvg: covariance not positive definite after regularization (epsilon " +
                       to_text(m.epsilon) + ")");
  }
  return m;
}

double mvg_distance(const MvgModel& pristine, const MvgModel& distorted) {
  if (pristine.dim() != distorted.dim() ||
      pristine.covariance.rows() != distorted.covariance.rows()) {
    throw ShapeError("mvg_distance: model dims differ (" + std::to_string(pristine.dim()) + " vs " +
                     std::to_string(distorted.dim()) + ")");
  }
  const Eigen::VectorXd diff = pristine.mean - distorted.mean;
  const Eigen::MatrixXd pooled = 0.5 * (pristine.covariance + distorted.covariance);
  const Eigen::LLT<Eigen::MatrixXd> llt(pooled);
  if (llt.info() != Eigen::Success) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(pooled, Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    throw NumericError("mvg_distance: pooled covariance not positive definite (eigenvalues " +
                       to_text(ev.minCoeff()) + " .. " + to_text(ev.maxCoeff()) + ")");
  }
  const double q = diff.dot(llt.solve(diff));
  return std::sqrt(std::max(0.0, q));
}

Corpus build_corpus(const std::vector<Video>& pristine, const EncoderSet& weights,
                    const QualityConfig& config) {
  const PristineFeatures f = select_pristine_patches(pristine, weights, config);
  Corpus c;
  c.mode = config.mode;
  c.fd = fit_mvg(f.fd, config.epsilon_rel);
  c.do_ = fit_mvg(f.do_, config.epsilon_rel);
  const std::size_t want = 10 * c.fd.dim();
  if (c.fd.sample_count < want) {
    c.warnings.push_back("corpus has " + std::to_string(c.fd.sample_count) +
                         " patches, fewer than 10 x dim = " + std::to_string(want));
  }
  return c;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  binio::Writer w(path);
  w.magic("VSNC");
  w.u32(kCorpusVersion);
  w.u32(static_cast<std::uint32_t>(corpus.mode));
  write_model(w, "fd", corpus.fd);
  write_model(w, "do", corpus.do_);
  w.close();
}

Corpus load_corpus(const std::string& path) {
  binio::Reader r(path);
  r.expect_magic("VSNC");
  const std::uint32_t version = r.u32("version");
  if (version != kCorpusVersion) {
    throw FormatError(path + ": unsupported corpus version " + std::to_string(version));
  }
  const std::uint32_t mode = r.u32("mode");
  if (mode > 2) throw FormatError(path + ": unknown feature mode " + std::to_string(mode));
  Corpus c;
  c.mode = static_cast<FeatureMode>(mode);
  c.fd = read_model(r, "fd");
  c.do_ = read_model(r, "do");
  if (c.fd.dim() != c.do_.dim()) throw FormatError(path + ": stream dims differ");
  if (!r.at_end()) throw FormatError(path + ": trailing bytes after corpus");
  return c;
}

VideoScore score_video(const Video& video, const EncoderSet& weights, const Corpus& corpus,
                       const QualityConfig& config) {
  config.validate();
  video.validate();
  if (video.size() < 2) throw DataError("scoring needs at least 2 frames");
  if (config.mode != corpus.mode) {
    throw ConfigError("feature mode " + to_string(config.mode) + " does not match corpus mode " +
                      to_string(corpus.mode));
  }
  if (static_cast<std::size_t>(weights.g(1).config.feature_dim()) != corpus.fd.dim()) {
    throw ShapeError("encoder feature dim does not match corpus dim");
  }
  const std::size_t r = config.patch.patch_size;
  if (video.width() < r || video.height() < r) {
    throw DataError("video is smaller than one " + std::to_string(r) + "-pixel patch");
  }
  const PatchGrid grid = patch_grid(video.width(), video.height(), r);
  std::vector<std::size_t> all(grid.count());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  const auto instants = sample_instants(video.size(), video.fps, config.sampling);
  // every instant shares the tiling, so a single-tile frame skips them all
  if (grid.count() < 2) throw DataError("no instant could be scored: fewer than 2 patches per frame");
  if (instants.empty()) throw DataError("no instant could be scored");
  std::vector<double> qfd(instants.size()), qdo(instants.size());
  std::vector<Eigen::VectorXd> pooled(instants.size());
  for_each_index(instants.size(), config.threads, [&](std::size_t i) {
    const InstantFeatures f = instant_features(video, instants[i].first, weights, config, all);
    qfd[i] = mvg_distance(corpus.fd, fit_mvg(f.fd, config.epsilon_rel));
    qdo[i] = mvg_distance(corpus.do_, fit_mvg(f.do_, config.epsilon_rel));
    pooled[i].resize(f.fd.cols() + f.do_.cols());
    pooled[i] << f.fd.colwise().mean().transpose(), f.do_.colwise().mean().transpose();
  });

  VideoScore s;
  for (std::size_t i = 0; i < instants.size(); ++i) {
    s.instants.push_back(instants[i].first);
    s.q_fd.push_back(qfd[i]);
    s.q_do.push_back(qdo[i]);
  }
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < s.q_fd.size(); ++i) {
    a += s.q_fd[i];
    b += s.q_do[i];
  }
  s.Q_fd = a / static_cast<double>(s.q_fd.size());
  s.Q_do = b / static_cast<double>(s.q_do.size());
  s.vision = s.Q_fd * s.Q_do;
  s.pooled_features = Eigen::VectorXd::Zero(pooled[0].size());
  for (const auto& p : pooled) s.pooled_features += p;
  s.pooled_features /= static_cast<double>(pooled.size());
  return s;
}

void write_scores(const std::vector<ScoreRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write scores " + path);
  out << "video_id,Q_fd,Q_do,VISION\n";
  for (const auto& r : rows) {
    out << r.video_id << "," << to_text(r.score.Q_fd) << "," << to_text(r.score.Q_do) << ","
        << to_text(r.score.vision) << "\n";
  }
  if (!out) throw FormatError("write failed for " + path);
}

}  // namespace vision
