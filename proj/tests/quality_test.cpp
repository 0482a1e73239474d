#include "vision/quality.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "vision/distort.hpp"
#include "vision/errors.hpp"
#include "vision/synth.hpp"
#include "mvg_oracle.hpp"

using namespace vision;
using namespace vision::testing;

namespace {

Frame flat_frame(std::size_t w, std::size_t h, float v = 0.4f) {
  Plane p(w, h);
  std::fill(p.data.begin(), p.data.end(), v);
  return make_frame(std::move(p));
}

Plane noise_plane(std::size_t w, std::size_t h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Plane p(w, h);
  for (float& v : p.data) v = u(rng);
  return p;
}

// Weighted standard deviation evaluated pixel by pixel with the full 2-D
// window: sum w (x - mu)^2, replicate borders.
double direct_local_sd(const Plane& p, std::size_t x, std::size_t y, int radius, double sigma) {
  std::vector<double> w1(2 * radius + 1);
  double s = 0;
  for (int i = -radius; i <= radius; ++i) s += w1[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  double mu = 0, wsum = 0;
  auto px = [&](int dx, int dy) {
    const long xx = std::clamp<long>(static_cast<long>(x) + dx, 0, p.width - 1);
    const long yy = std::clamp<long>(static_cast<long>(y) + dy, 0, p.height - 1);
    return static_cast<double>(p.at(xx, yy));
  };
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const double w = w1[dx + radius] * w1[dy + radius] / (s * s);
      mu += w * px(dx, dy);
      wsum += w;
    }
  }
  double var = 0;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const double w = w1[dx + radius] * w1[dy + radius] / (s * s);
      var += w * (px(dx, dy) - mu) * (px(dx, dy) - mu);
    }
  }
  EXPECT_NEAR(wsum, 1.0, 1e-12);
  return std::sqrt(var);
}

struct Fixture {
  EncoderSet weights;
  QualityConfig config;
  Video video;

  Fixture() {
    EncoderConfig ec;
    ec.block_channels = {4, 4, 6, 6};
    weights = init_encoder_set(ec, 9);
    config.patch.patch_size = 16;
    config.flow.downscale_factor = 2;
    config.flow.inner_iterations = 10;
    SynthConfig sc;
    sc.width = 64;
    sc.height = 48;
    sc.frames = 9;
    sc.fps = 4;
    video = synth_scene(sc, 21);
  }
};

}  // namespace

TEST(PatchConfig, DefaultsAndValidation) {
  PatchConfig c;
  EXPECT_EQ(c.patch_size, 96u);
  EXPECT_EQ(c.sharpness_fraction, 0.85);
  EXPECT_NO_THROW(c.validate());
  c.patch_size = 15;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.sharpness_fraction = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.sharpness_fraction = 1.01;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.local_window = 6;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(PatchGrid, FullHdTiling) {
  const PatchGrid g = patch_grid(1920, 1080, 96);
  EXPECT_EQ(g.cols, 20u);
  EXPECT_EQ(g.rows, 11u);
  EXPECT_EQ(g.count(), 220u);
  EXPECT_EQ(g.x0(21), 96u);
  EXPECT_EQ(g.y0(21), 96u);
}

TEST(Sharpness, ConstantFrameIsZero) {
  PatchConfig c;
  c.patch_size = 16;
  const SharpnessMap m = patch_sharpness(flat_frame(64, 32), c);
  ASSERT_EQ(m.values.size(), 8u);
  for (double v : m.values) EXPECT_NEAR(v, 0.0, 1e-7);
}

TEST(Sharpness, TexturedPatchIsArgmax) {
  PatchConfig c;
  c.patch_size = 16;
  Plane p = flat_frame(64, 48).luma;
  const Plane n = noise_plane(16, 16, 3);
  for (std::size_t y = 0; y < 16; ++y) {
    for (std::size_t x = 0; x < 16; ++x) p.at(32 + x, 16 + y) = n.at(x, y);
  }
  const SharpnessMap m = patch_sharpness(make_frame(std::move(p)), c);
  const auto best = std::max_element(m.values.begin(), m.values.end()) - m.values.begin();
  EXPECT_EQ(best, 6);  // column 2, row 1 of a 4-wide grid
}

TEST(Sharpness, MatchesDirectWindowedDeviation) {
  const Plane p = noise_plane(40, 33, 11);
  const auto sd = local_contrast(p, 7, 7.0 / 6.0);
  for (std::size_t y = 0; y < p.height; y += 4) {
    for (std::size_t x = 0; x < p.width; x += 3) {
      EXPECT_NEAR(sd[y * p.width + x], direct_local_sd(p, x, y, 3, 7.0 / 6.0), 1e-9);
    }
  }
  PatchConfig c;
  c.patch_size = 16;
  const SharpnessMap m = patch_sharpness(make_frame(p), c);
  ASSERT_EQ(m.grid.count(), 4u);
  for (std::size_t t = 0; t < 4; ++t) {
    double acc = 0;
    for (std::size_t y = 0; y < 16; ++y) {
      for (std::size_t x = 0; x < 16; ++x) {
        acc += direct_local_sd(p, m.grid.x0(t) + x, m.grid.y0(t) + y, 3, 7.0 / 6.0);
      }
    }
    EXPECT_NEAR(m.values[t], acc / 256.0, 1e-9);
  }
}

TEST(Sharpness, FrameSmallerThanPatchIsDataError) {
  PatchConfig c;
  EXPECT_THROW(patch_sharpness(flat_frame(95, 200), c), DataError);
}

TEST(SharpPatches, ThresholdExtremes) {
  SharpnessMap m;
  m.values = {0.1, 0.5, 0.2, 0.5, 0.05};
  EXPECT_EQ(sharp_patches(m, 1.0), (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(sharp_patches(m, 1e-12).size(), 5u);
  EXPECT_EQ(sharp_patches(m, 0.4), (std::vector<std::size_t>{1, 2, 3}));
}

TEST(FeatureMode, RoundTrip) {
  for (auto m : {FeatureMode::fused, FeatureMode::first_only, FeatureMode::second_only}) {
    EXPECT_EQ(parse_feature_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_feature_mode("both"), ConfigError);
}

TEST(PristinePatches, CoLocatedWithSharpFramePatches) {
  Fixture f;
  f.config.sampling.per_second = 2.0;
  const PristineFeatures pf = select_pristine_patches({f.video}, f.weights, f.config);
  ASSERT_GT(pf.kept.size(), 0u);
  EXPECT_EQ(static_cast<std::size_t>(pf.fd.rows()), pf.kept.size());
  EXPECT_EQ(pf.fd.cols(), 6);

  const auto instants = sample_instants(f.video.size(), f.video.fps, f.config.sampling);
  std::size_t row = 0;
  for (const auto& [t, t1] : instants) {
    const auto tiles = sharp_patches(patch_sharpness(f.video.frames[t], f.config.patch),
                                     f.config.patch.sharpness_fraction);
    // diff and flow features are recomputed at exactly these grid cells
    const InstantFeatures direct = instant_features(f.video, t, f.weights, f.config, tiles);
    for (std::size_t i = 0; i < tiles.size(); ++i, ++row) {
      ASSERT_LT(row, pf.kept.size());
      EXPECT_EQ(pf.kept[row].instant, t);
      EXPECT_EQ(pf.kept[row].tile, tiles[i]);
      EXPECT_EQ(pf.fd.row(row), direct.fd.row(i));
      EXPECT_EQ(pf.do_.row(row), direct.do_.row(i));
    }
  }
  EXPECT_EQ(row, pf.kept.size());
}

TEST(PristinePatches, FractionOneKeepsOnlyTheSharpest) {
  Fixture f;
  f.config.patch.sharpness_fraction = 1.0;
  const PristineFeatures pf = select_pristine_patches({f.video}, f.weights, f.config);
  const auto n = sample_instants(f.video.size(), f.video.fps, f.config.sampling).size();
  EXPECT_EQ(pf.kept.size(), n);  // no exact ties in a textured scene
  f.config.patch.sharpness_fraction = 1e-9;
  const PristineFeatures all = select_pristine_patches({f.video}, f.weights, f.config);
  EXPECT_EQ(all.kept.size(), n * 12);
}

TEST(PristinePatches, NeedsVideos) {
  Fixture f;
  EXPECT_THROW(select_pristine_patches({}, f.weights, f.config), DataError);
}

TEST(InstantFeatures, ModesPickTheRightEncoders) {
  Fixture f;
  const std::vector<std::size_t> tiles = {0, 5};
  QualityConfig c = f.config;
  const InstantFeatures fused = instant_features(f.video, 2, f.weights, c, tiles);
  c.mode = FeatureMode::first_only;
  const InstantFeatures first = instant_features(f.video, 2, f.weights, c, tiles);
  c.mode = FeatureMode::second_only;
  const InstantFeatures second = instant_features(f.video, 2, f.weights, c, tiles);
  EXPECT_LT((fused.fd - 0.5 * (first.fd + second.fd)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((fused.do_ - 0.5 * (first.do_ + second.do_)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FitMvg, TwoSamplesMean) {
  Eigen::MatrixXd s(2, 3);
  s << 1, 2, 3, 5, -2, 0;
  const MvgModel m = fit_mvg(s);
  EXPECT_DOUBLE_EQ(m.mean(0), 3.0);
  EXPECT_DOUBLE_EQ(m.mean(1), 0.0);
  EXPECT_DOUBLE_EQ(m.mean(2), 1.5);
  EXPECT_EQ(m.sample_count, 2u);
}

TEST(FitMvg, IdenticalSamplesGiveEpsilonIdentity) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Constant(7, 4, 0.3);
  const MvgModel m = fit_mvg(s, 1e-6);
  EXPECT_EQ(m.covariance, 1e-6 * Eigen::MatrixXd::Identity(4, 4));
}

TEST(FitMvg, FewerThanTwoSamplesIsDataError) {
  EXPECT_THROW(fit_mvg(Eigen::MatrixXd::Zero(1, 3)), DataError);
}

TEST(FitMvg, MatchesIndependentStatistics) {
  // 500 draws of a known 3-dim Gaussian; the oracle is a Welford accumulator
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  Eigen::Matrix3d l;
  l << 1.0, 0, 0, 0.5, 2.0, 0, -0.3, 0.4, 0.7;
  const Eigen::Vector3d mu(1.0, -2.0, 0.5);
  Eigen::MatrixXd s(500, 3);
  for (int i = 0; i < 500; ++i) {
    const Eigen::Vector3d z(nd(rng), nd(rng), nd(rng));
    s.row(i) = (mu + l * z).transpose();
  }
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Matrix3d m2 = Eigen::Matrix3d::Zero();
  for (int i = 0; i < 500; ++i) {
    const Eigen::Vector3d x = s.row(i).transpose();
    const Eigen::Vector3d d = x - mean;
    mean += d / (i + 1.0);
    m2 += d * (x - mean).transpose();
  }
  const Eigen::Matrix3d cov = m2 / 499.0;
  const MvgModel m = fit_mvg(s, 1e-6);
  const double eps = 1e-6 * cov.trace() / 3.0;
  EXPECT_NEAR(m.epsilon, eps, 1e-15);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(m.mean(i), mean(i), 1e-12);
    for (int j = 0; j < 3; ++j) {
      EXPECT_NEAR(m.covariance(i, j), cov(i, j) + (i == j ? eps : 0.0), 1e-10);
      EXPECT_EQ(m.covariance(i, j), m.covariance(j, i));
    }
  }
  // and within sampling error of the generating model
  const Eigen::Matrix3d truth = l * l.transpose();
  EXPECT_LT((m.mean - mu).norm(), 0.3);
  EXPECT_LT((m.covariance - truth).cwiseAbs().maxCoeff(), 0.6);
}

TEST(MvgDistance, IdenticalModelsAreZero) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const MvgModel p = random_model(1 + i % 4, rng);
    EXPECT_EQ(mvg_distance(p, p), 0.0);
  }
}

TEST(MvgDistance, UnitMahalanobis) {
  MvgModel a, b;
  a.mean = Eigen::Vector2d(0, 0);
  b.mean = Eigen::Vector2d(1, 0);
  a.covariance = b.covariance = Eigen::Matrix2d::Identity();
  EXPECT_DOUBLE_EQ(mvg_distance(a, b), 1.0);
}

TEST(MvgDistance, MatchesAdjugateInverse) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const std::size_t dim = 1 + i % 4;
    const MvgModel a = random_model(dim, rng), b = random_model(dim, rng);
    EXPECT_NEAR(mvg_distance(a, b), brute_distance(a, b), 1e-8);
  }
}

TEST(MvgDistance, SymmetricAndMonotoneInMeanGap) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    const MvgModel a = random_model(4, rng), b = random_model(4, rng);
    EXPECT_NEAR(mvg_distance(a, b), mvg_distance(b, a), 1e-12);
  }
  MvgModel p = random_model(4, rng);
  MvgModel q = p;
  const Eigen::VectorXd dir = Eigen::VectorXd::Random(4);
  double last = 0.0;
  for (int s = 1; s <= 10; ++s) {
    q.mean = p.mean + 0.3 * s * dir;
    const double d = mvg_distance(p, q);
    EXPECT_GT(d, last);
    last = d;
  }
}

TEST(MvgDistance, ErrorsOnShapeAndDefiniteness) {
  std::mt19937_64 rng(4);
  EXPECT_THROW(mvg_distance(random_model(3, rng), random_model(4, rng)), ShapeError);
  MvgModel bad = random_model(3, rng);
  bad.covariance = -bad.covariance;
  try {
    mvg_distance(bad, bad);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("eigenvalues"), std::string::npos);
  }
}

TEST(CorpusFile, RoundTripAndCorruption) {
  std::mt19937_64 rng(6);
  Corpus c;
  c.mode = FeatureMode::second_only;
  Eigen::MatrixXd s(40, 5);
  std::normal_distribution<double> nd;
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = nd(rng);
  c.fd = fit_mvg(s);
  c.do_ = fit_mvg(2.0 * s);
  const auto dir = std::filesystem::temp_directory_path() / "vision_quality_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "c.vsnc").string();
  save_corpus(c, path);
  const Corpus r = load_corpus(path);
  EXPECT_EQ(r.mode, FeatureMode::second_only);
  EXPECT_EQ(r.fd.sample_count, 40u);
  EXPECT_EQ(r.fd.epsilon, c.fd.epsilon);
  EXPECT_LT((r.fd.mean - c.fd.mean).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((r.do_.covariance - c.do_.covariance).cwiseAbs().maxCoeff(), 1e-5);

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 3);
  EXPECT_THROW(load_corpus(path), FormatError);
  {
    std::ofstream out(path, std::ios::binary);
    out << "VSNX0000";
  }
  EXPECT_THROW(load_corpus(path), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(ScoreVideo, PoolingAndProductIdentities) {
  Fixture f;
  const Corpus c = build_corpus({f.video}, f.weights, f.config);
  f.config.sampling = SamplingRate::every_frame();
  const VideoScore s = score_video(f.video, f.weights, c, f.config);
  ASSERT_EQ(s.q_fd.size(), f.video.size() - 1);
  double a = 0, b = 0;
  for (std::size_t i = 0; i < s.q_fd.size(); ++i) {
    EXPECT_GE(s.q_fd[i], 0.0);
    EXPECT_GE(s.q_do[i], 0.0);
    a += s.q_fd[i];
    b += s.q_do[i];
  }
  EXPECT_EQ(s.Q_fd, a / s.q_fd.size());
  EXPECT_EQ(s.Q_do, b / s.q_do.size());
  EXPECT_EQ(s.vision, s.Q_fd * s.Q_do);
}

TEST(ScoreVideo, DeterministicAndThreadIndependent) {
  Fixture f;
  const Corpus c = build_corpus({f.video}, f.weights, f.config);
  f.config.sampling = SamplingRate::every_frame();
  const VideoScore a = score_video(f.video, f.weights, c, f.config);
  const VideoScore b = score_video(f.video, f.weights, c, f.config);
  f.config.threads = 3;
  const VideoScore t = score_video(f.video, f.weights, c, f.config);
  EXPECT_EQ(a.q_fd, b.q_fd);
  EXPECT_EQ(a.q_do, b.q_do);
  EXPECT_EQ(a.q_fd, t.q_fd);
  EXPECT_EQ(a.q_do, t.q_do);
  EXPECT_EQ(a.vision, t.vision);
}

TEST(ScoreVideo, PristineScoresBelowDistortedVersions) {
  Fixture f;
  const Corpus c = build_corpus({f.video}, f.weights, f.config);
  const double own = score_video(f.video, f.weights, c, f.config).vision;
  std::vector<double> distorted;
  for (double sigma : {1.5, 2.5}) {
    distorted.push_back(score_video(gaussian_blur(f.video, sigma), f.weights, c, f.config).vision);
  }
  for (double n : {0.05, 0.1}) {
    distorted.push_back(score_video(white_noise(f.video, n, 3), f.weights, c, f.config).vision);
  }
  std::sort(distorted.begin(), distorted.end());
  EXPECT_LT(own, 0.5 * (distorted[1] + distorted[2]));
}

TEST(ScoreVideo, Errors) {
  Fixture f;
  Corpus c = build_corpus({f.video}, f.weights, f.config);
  QualityConfig other = f.config;
  other.mode = FeatureMode::first_only;
  EXPECT_THROW(score_video(f.video, f.weights, c, other), ConfigError);

  SynthConfig sc;
  sc.width = 31;
  sc.height = 20;
  sc.frames = 3;
  EXPECT_THROW(score_video(synth_scene(sc, 1), f.weights, c, f.config), DataError);  // one tile

  const Video tiny = make_video({flat_frame(15, 20).luma, flat_frame(15, 20).luma}, 4.0);
  EXPECT_THROW(score_video(tiny, f.weights, c, f.config), DataError);

  EncoderConfig ec;
  ec.block_channels = {4, 4, 6, 7};
  EXPECT_THROW(score_video(f.video, init_encoder_set(ec, 1), c, f.config), ShapeError);
}

TEST(ScoreCsv, FixedColumns) {
  const auto path = (std::filesystem::temp_directory_path() / "vision_scores.csv").string();
  VideoScore s;
  s.Q_fd = 1.5;
  s.Q_do = 2.0;
  s.vision = 3.0;
  write_scores({{"clip_a", s}}, path);
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "video_id,Q_fd,Q_do,VISION");
  EXPECT_EQ(row, "clip_a,1.5,2,3");
  std::filesystem::remove(path);
}
