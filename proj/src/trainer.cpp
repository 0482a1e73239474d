#include "vision/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "vision/seed.hpp"
#include "vision/textfmt.hpp"

namespace vision {

namespace {

// log sum_k exp(x_k) with max subtraction.
double log_sum_exp(const double* x, std::size_t n, std::size_t stride = 1) {
  double m = x[0];
  for (std::size_t k = 1; k < n; ++k) m = std::max(m, x[k * stride]);
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += std::exp(x[k * stride] - m);
  return m + std::log(s);
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void copy_plane(const Plane& p, float* dst) { std::copy(p.data.begin(), p.data.end(), dst); }

std::vector<double> to_double(const Tensor4<float>& t) {
  return std::vector<double>(t.data(), t.data() + t.size());
}

Tensor4<float> to_grad_tensor(const std::vector<double>& g, const Shape4& shape) {
  Tensor4<float> t(shape);
  for (std::size_t i = 0; i < g.size(); ++i) t[i] = static_cast<float>(g[i]);
  return t;
}


}  // namespace

void TrainConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (versions_per_scene < 2) throw ConfigError("versions_per_scene (K) must be at least 2");
  if (scenes_per_batch < 1) throw ConfigError("scenes_per_batch (S) must be at least 1");
  if (crop < kMinEncoderInput) throw ConfigError("crop must be at least 16");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  EncoderConfig e = encoder;
  e.input_channels = 1;
  e.validate();
  flow.validate();
}

const FlowField& FlowCache::get(const Video& v, std::size_t scene, std::size_t version,
                                std::size_t t, std::size_t x0, std::size_t y0, std::size_t c,
                                const Tvl1Params& p) {
  const auto key = std::make_tuple(scene, version, t, x0, y0);
  auto it = cache_.find(key);
  if (it != cache_.end() && it->second.u.width == c) return it->second;
  const Frame a = make_frame(crop(v.frames[t].luma, x0, y0, c, c));
  const Frame b = make_frame(crop(v.frames[t + 1].luma, x0, y0, c, c));
  return cache_[key] = tvl1_flow(a, b, p);
}

ViewBatch sample_batch(const std::vector<SceneSet>& scenes, const TrainConfig& cfg,
                       std::mt19937_64& rng, FlowCache* cache) {
  cfg.validate();
  const std::size_t S = cfg.scenes_per_batch, K = cfg.versions_per_scene, c = cfg.crop;
  if (scenes.size() < S) {
    throw ConfigError("need at least " + std::to_string(S) + " scene sets, have " +
                      std::to_string(scenes.size()));
  }
  for (const auto& s : scenes) {
    if (s.size() != K) {
      throw ConfigError("scene " + s.scene_id + " has " + std::to_string(s.size()) +
                        " versions, config expects K=" + std::to_string(K));
    }
    if (s.versions[0].size() < 2) throw ConfigError("scene " + s.scene_id + " has fewer than 2 frames");
    if (s.versions[0].width() < c || s.versions[0].height() < c) {
      throw ConfigError("scene " + s.scene_id + " is smaller than the crop size " + std::to_string(c));
    }
  }
  FlowCache local;
  FlowCache& flows = cache ? *cache : local;

  // partial Fisher-Yates: S scenes without replacement
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < S; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
  }

  ViewBatch b;
  b.scenes = S;
  b.versions = K;
  b.frames = Tensor4<float>({S * K, 1, c, c});
  b.diffs = Tensor4<float>({S * K, 1, c, c});
  b.flows = Tensor4<float>({S * K, 2, c, c});
  const std::size_t plane = c * c;
  for (std::size_t s = 0; s < S; ++s) {
    const SceneSet& set = scenes[order[s]];
    const Video& v0 = set.versions[0];
    std::uniform_int_distribution<std::size_t> pick_t(0, v0.size() - 2);
    const std::size_t t = pick_t(rng);
    std::size_t x0 = (v0.width() - c) / 2, y0 = (v0.height() - c) / 2;
    if (cfg.random_crop) {
      x0 = std::uniform_int_distribution<std::size_t>(0, v0.width() - c)(rng);
      y0 = std::uniform_int_distribution<std::size_t>(0, v0.height() - c)(rng);
    }
    b.scene_indices.push_back(order[s]);
    b.timestamps.push_back(t);
    b.crop_offsets.emplace_back(x0, y0);
    for (std::size_t k = 0; k < K; ++k) {
      const Video& v = set.versions[k];
      const std::size_t item = s * K + k;
      const Frame f0 = make_frame(crop(v.frames[t].luma, x0, y0, c, c));
      const Frame f1 = make_frame(crop(v.frames[t + 1].luma, x0, y0, c, c));
      copy_plane(f0.luma, b.frames.data() + item * plane);
      copy_plane(frame_difference(f0, f1).values, b.diffs.data() + item * plane);
      const FlowField& fl = flows.get(v, order[s], k, t, x0, y0, c, cfg.flow);
      copy_plane(fl.u, b.flows.data() + (2 * item) * plane);
      copy_plane(fl.v, b.flows.data() + (2 * item + 1) * plane);
    }
  }
  return b;
}

double similarity(std::span<const double> a, std::span<const double> b, double tau) {
  if (a.size() != b.size()) throw ShapeError("similarity: vector lengths differ");
  if (!(tau > 0.0)) throw ConfigError("similarity: tau must be positive");
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw NumericError("similarity: zero-norm feature vector");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return std::exp(dot / (na * nb * tau));
}

double contrastive_loss_one_anchor(std::span<const double> anchor,
                                   const std::vector<std::vector<double>>& candidates,
                                   std::size_t positive_index, double tau) {
  if (candidates.empty()) throw ShapeError("contrastive loss needs at least one candidate");
  if (positive_index >= candidates.size()) throw ShapeError("positive index out of range");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  const double na = norm(anchor);
  if (na == 0.0) throw NumericError("contrastive loss: zero-norm anchor");
  std::vector<double> logits;
  for (const auto& cnd : candidates) {
    if (cnd.size() != anchor.size()) throw ShapeError("candidate length differs from anchor");
    const double nc = norm(cnd);
    if (nc == 0.0) throw NumericError("contrastive loss: zero-norm candidate");
    double dot = 0.0;
    for (std::size_t i = 0; i < cnd.size(); ++i) dot += anchor[i] * cnd[i];
    logits.push_back(dot / (na * nc * tau));
  }
  const double loss = log_sum_exp(logits.data(), logits.size()) - logits[positive_index];
  return std::max(loss, 0.0);
}

StreamLoss stream_loss(std::span<const double> a, std::span<const double> b, std::size_t S,
                       std::size_t K, std::size_t D, double tau) {
  if (a.size() != S * K * D || b.size() != S * K * D) throw ShapeError("stream_loss: feature size mismatch");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  StreamLoss out;
  out.grad_a.assign(a.size(), 0.0);
  out.grad_b.assign(b.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(S * K);

  std::vector<double> an(K * D), bn(K * D), na(K), nb(K), logit(K * K), g(K * K);
  for (std::size_t s = 0; s < S; ++s) {
    const double* A = a.data() + s * K * D;
    const double* B = b.data() + s * K * D;
    for (std::size_t k = 0; k < K; ++k) {
      na[k] = norm({A + k * D, D});
      nb[k] = norm({B + k * D, D});
      if (na[k] == 0.0 || nb[k] == 0.0) throw NumericError("stream_loss: zero-norm feature vector");
      for (std::size_t d = 0; d < D; ++d) {
        an[k * D + d] = A[k * D + d] / na[k];
        bn[k * D + d] = B[k * D + d] / nb[k];
      }
    }
    // logits L[j][k] = cos(a_j, b_k) / tau
    for (std::size_t j = 0; j < K; ++j) {
      for (std::size_t k = 0; k < K; ++k) {
        double dot = 0.0;
        for (std::size_t d = 0; d < D; ++d) dot += an[j * D + d] * bn[k * D + d];
        logit[j * K + k] = dot / tau;
      }
    }
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t j = 0; j < K; ++j) {
      // a_j anchored over row j, b_j anchored over column j
      const double lse_row = log_sum_exp(&logit[j * K], K);
      const double lse_col = log_sum_exp(&logit[j], K, K);
      out.value += scale * (std::max(lse_row - logit[j * K + j], 0.0) +
                            std::max(lse_col - logit[j * K + j], 0.0));
      for (std::size_t k = 0; k < K; ++k) {
        g[j * K + k] += scale * std::exp(logit[j * K + k] - lse_row);
        g[k * K + j] += scale * std::exp(logit[k * K + j] - lse_col);
      }
      g[j * K + j] -= 2.0 * scale;
    }
    // dL/d cos = g / tau; back through the normalization
    for (std::size_t j = 0; j < K; ++j) {
      std::vector<double> ga(D, 0.0), gb(D, 0.0);
      for (std::size_t k = 0; k < K; ++k) {
        const double wa = g[j * K + k] / tau, wb = g[k * K + j] / tau;
        for (std::size_t d = 0; d < D; ++d) {
          ga[d] += wa * bn[k * D + d];
          gb[d] += wb * an[k * D + d];
        }
      }
      double pa = 0.0, pb = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        pa += ga[d] * an[j * D + d];
        pb += gb[d] * bn[j * D + d];
      }
      for (std::size_t d = 0; d < D; ++d) {
        out.grad_a[(s * K + j) * D + d] = (ga[d] - pa * an[j * D + d]) / na[j];
        out.grad_b[(s * K + j) * D + d] = (gb[d] - pb * bn[j * D + d]) / nb[j];
      }
    }
  }
  return out;
}

EncoderSet init_encoder_set(const EncoderConfig& base, std::uint64_t seed) {
  EncoderSet set;
  for (std::size_t i = 0; i < 4; ++i) {
    EncoderConfig c = base;
    c.input_channels = i == 3 ? 2 : 1;
    set.encoders[i] = init_weights(c, derive_seed(seed, 100 + i));
  }
  return set;
}

void save_encoder_set(const EncoderSet& set, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 1; i <= 4; ++i) {
    save_weights(set.g(i), (std::filesystem::path(dir) / ("g" + std::to_string(i) + ".vsnw")).string());
  }
}

EncoderSet load_encoder_set(const std::string& dir) {
  EncoderSet set;
  for (std::size_t i = 1; i <= 4; ++i) {
    const auto path = std::filesystem::path(dir) / ("g" + std::to_string(i) + ".vsnw");
    if (!std::filesystem::exists(path)) throw FormatError("missing encoder file " + path.string());
    set.g(i) = load_weights(path.string());
  }
  const int d = set.g(1).config.feature_dim();
  for (std::size_t i = 2; i <= 4; ++i) {
    if (set.g(i).config.feature_dim() != d) throw FormatError(dir + ": encoder feature dims differ");
  }
  if (set.g(4).config.input_channels != 2 || set.g(1).config.input_channels != 1) {
    throw FormatError(dir + ": unexpected encoder input channels");
  }
  return set;
}

TrainResult train(const std::vector<SceneSet>& scenes, const TrainConfig& cfg,
                  const StepCallback& on_step) {
  cfg.validate();
  TrainResult r;
  r.weights = init_encoder_set(cfg.encoder, cfg.seed);
  if (cfg.iterations == 0) return r;

  std::mt19937_64 rng(derive_seed(cfg.seed, 0));
  FlowCache cache;
  std::array<AdamState<float>, 4> adam;
  for (auto& a : adam) a.learning_rate = cfg.learning_rate;
  const std::size_t S = cfg.scenes_per_batch, K = cfg.versions_per_scene;
  const std::size_t D = static_cast<std::size_t>(cfg.encoder.feature_dim());

  auto run_stream = [&](EncoderWeights& wa, EncoderWeights& wb, const Tensor4<float>& xa,
                        const Tensor4<float>& xb, std::size_t step) {
    EncoderPass<float> pa(wa, xa, Mode::train);
    EncoderPass<float> pb(wb, xb, Mode::train);
    const auto za = to_double(pa.features()), zb = to_double(pb.features());
    StreamLoss l;
    try {
      l = stream_loss(za, zb, S, K, D, cfg.temperature);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(step));
    }
    if (!std::isfinite(l.value)) {
      throw NumericError("non-finite loss at step " + std::to_string(step));
    }
    pa.backward(to_grad_tensor(l.grad_a, pa.features().shape()));
    pb.backward(to_grad_tensor(l.grad_b, pb.features().shape()));
    return l.value;
  };

  for (std::size_t step = 0; step < cfg.iterations; ++step) {
    const ViewBatch batch = sample_batch(scenes, cfg, rng, &cache);
    LossRecord rec;
    rec.step = step;
    rec.loss_fd = run_stream(r.weights.g(1), r.weights.g(2), batch.frames, batch.diffs, step);
    rec.loss_do = run_stream(r.weights.g(3), r.weights.g(4), batch.diffs, batch.flows, step);
    for (std::size_t i = 0; i < 4; ++i) {
      auto params = r.weights.encoders[i].trainable();
      adam_step<float>(params, adam[i]);
      for (const auto* p : params) {
        if (!p->value.all_finite()) {
          throw NumericError("non-finite weights in encoder g" + std::to_string(i + 1) +
                             " after step " + std::to_string(step));
        }
      }
    }
    r.trace.push_back(rec);
    if (on_step) on_step(rec);
  }
  return r;
}

Tensor4<float> fused_features(const EncoderWeights& g_a, const EncoderWeights& g_b,
                              const Tensor4<float>& x_a, const Tensor4<float>& x_b) {
  const Tensor4<float> za = encode(g_a, x_a), zb = encode(g_b, x_b);
  if (za.shape() != zb.shape()) throw ShapeError("fused_features: encoder outputs differ in shape");
  Tensor4<float> out(za.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5f * (za[i] + zb[i]);
  return out;
}

void write_loss_trace(const std::vector<LossRecord>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write loss trace " + path);
  out << "step,loss_fd,loss_do\n";
  for (const auto& r : trace) out << r.step << "," << to_text(r.loss_fd) << "," << to_text(r.loss_do) << "\n";
  if (!out) throw FormatError("write failed for " + path);
}

}  // namespace vision
