#include "vision/views.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "texture.hpp"

namespace fs = std::filesystem;
using namespace vision;
using namespace vision::testing;

namespace {

double mean_of(const Plane& p) {
  double s = 0.0;
  for (float v : p.data) s += v;
  return s / static_cast<double>(p.size());
}

}  // namespace

TEST(Grayscale, Bt601Luma) {
  RgbImage white{1, 1, 3, 255.0f, {255, 255, 255}};
  EXPECT_FLOAT_EQ(to_grayscale(white).luma.at(0, 0), 1.0f);
  RgbImage red{1, 1, 3, 255.0f, {255, 0, 0}};
  EXPECT_NEAR(to_grayscale(red).luma.at(0, 0), 0.299, 1.0 / 255.0);
  RgbImage gray{2, 1, 3, 1.0f, {0.25f, 0.25f, 0.25f, 0.75f, 0.75f, 0.75f}};
  const auto g = to_grayscale(gray);
  EXPECT_NEAR(g.luma.at(0, 0), 0.25, 1e-6);
  EXPECT_NEAR(g.luma.at(1, 0), 0.75, 1e-6);
}

TEST(Grayscale, WrongChannelCountIsShapeError) {
  RgbImage two{1, 1, 2, 255.0f, {1, 2}};
  EXPECT_THROW(to_grayscale(two), ShapeError);
}

TEST(Frame, ValuesAreClamped) {
  Plane p(2, 1);
  p.data = {-0.5f, 1.5f};
  const Frame f = make_frame(p);
  EXPECT_EQ(f.luma.data, (std::vector<float>{0.0f, 1.0f}));
}

TEST(FrameDifference, Definition) {
  const Frame zero = make_frame(Plane(4, 3, 0.0f));
  const Frame one = make_frame(Plane(4, 3, 1.0f));
  for (float v : frame_difference(zero, zero).values.data) EXPECT_EQ(v, 0.0f);
  for (float v : frame_difference(zero, one).values.data) EXPECT_EQ(v, 1.0f);
}

TEST(FrameDifference, AntisymmetryAndBrightnessShift) {
  const Texture tex(1);
  const Frame a = tex.render(32, 24), b = tex.render(32, 24, 1.5, 0.5);
  const auto ab = frame_difference(a, b), ba = frame_difference(b, a);
  for (std::size_t i = 0; i < ab.values.size(); ++i) EXPECT_EQ(ab.values.data[i], -ba.values.data[i]);
  // a shift that is exact in float keeps the difference bit-identical
  const Frame a2 = tex.render(32, 24, 0, 0, 0.0625), b2 = tex.render(32, 24, 1.5, 0.5, 0.0625);
  const auto shifted = frame_difference(a2, b2);
  for (std::size_t i = 0; i < ab.values.size(); ++i) {
    EXPECT_NEAR(shifted.values.data[i], ab.values.data[i], 1e-6);
  }
  bool any_nonzero = false;
  for (float v : ab.values.data) any_nonzero |= v != 0.0f;
  EXPECT_TRUE(any_nonzero);
}

TEST(FrameDifference, DimMismatchIsShapeError) {
  EXPECT_THROW(frame_difference(make_frame(Plane(4, 4)), make_frame(Plane(4, 5))), ShapeError);
}

TEST(Tvl1, IdenticalFramesGiveZeroFlow) {
  const Frame a = Texture(2).render(128, 128);
  for (int factor : {1, 8}) {
    Tvl1Params p;
    p.downscale_factor = factor;
    const auto f = tvl1_flow(a, a, p);
    ASSERT_EQ(f.u.width, 128u);
    for (std::size_t i = 0; i < f.u.size(); ++i) {
      EXPECT_LT(std::hypot(f.u.data[i], f.v.data[i]), 1e-2);
    }
  }
}

TEST(Tvl1, ConstantFramesGiveZeroFlow) {
  const Frame a = make_frame(Plane(64, 64, 0.3f)), b = make_frame(Plane(64, 64, 0.6f));
  const auto f = tvl1_flow(a, b);
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    EXPECT_EQ(f.u.data[i], 0.0f);
    EXPECT_EQ(f.v.data[i], 0.0f);
  }
}

TEST(Tvl1, TranslationAccuracyFullResolution) {
  const Texture tex(3);
  const Frame a = tex.render(128, 128), b = tex.render(128, 128, 3.0, 0.0);
  Tvl1Params p;
  p.downscale_factor = 1;
  EXPECT_LT(mean_endpoint_error(tvl1_flow(a, b, p), 3.0, 0.0), 0.5);
}

TEST(Tvl1, TranslationAccuracyAtDefaultDownscale) {
  // at 1/8 resolution the frame is 16x16, so the texture has to be smooth on
  // that grid (periods of 48 px and up)
  const Texture tex(3, 12, 1.0 / 48.0);
  const Frame a = tex.render(128, 128), b = tex.render(128, 128, 3.0, 0.0);
  Tvl1Trace trace;
  const auto f = tvl1_flow(a, b, Tvl1Params{}, &trace);
  EXPECT_EQ(trace.downscale_used, 8);
  EXPECT_LT(mean_endpoint_error(f, 3.0, 0.0), 0.5);
}

TEST(Tvl1, DownscaleConsistency) {
  const Texture tex(4);
  const Frame a = tex.render(128, 128), b = tex.render(128, 128, 8.0, 0.0);
  Tvl1Params coarse, fine;
  coarse.downscale_factor = 8;
  fine.downscale_factor = 1;
  const auto fc = tvl1_flow(a, b, coarse), ff = tvl1_flow(a, b, fine);
  EXPECT_EQ(fc.scale_factor, 8.0);
  EXPECT_EQ(ff.scale_factor, 1.0);
  EXPECT_NEAR(mean_of(fc.u), mean_of(ff.u), 1.0);
  EXPECT_NEAR(mean_of(fc.v), mean_of(ff.v), 1.0);
}

TEST(Tvl1, BrightnessShiftBarelyMovesFlow) {
  const Texture tex(5);
  const Frame a = tex.render(128, 128), b = tex.render(128, 128, 2.0, 1.0);
  const Frame a2 = tex.render(128, 128, 0, 0, 0.02), b2 = tex.render(128, 128, 2.0, 1.0, 0.02);
  const auto f = tvl1_flow(a, b), g = tvl1_flow(a2, b2);
  double s = 0.0;
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    s += std::hypot(f.u.data[i] - g.u.data[i], f.v.data[i] - g.v.data[i]);
  }
  EXPECT_LT(s / static_cast<double>(f.u.size()), 0.1);
}

TEST(Tvl1, EnergyNonIncreasingWithinEachWarp) {
  const Texture tex(6);
  const Frame a = tex.render(96, 80), b = tex.render(96, 80, 2.5, -1.0);
  Tvl1Params p;
  p.downscale_factor = 1;
  Tvl1Trace trace;
  tvl1_flow(a, b, p, &trace);
  ASSERT_FALSE(trace.warps.empty());
  for (const auto& w : trace.warps) {
    ASSERT_EQ(w.energy.size(), static_cast<std::size_t>(p.inner_iterations));
    for (std::size_t i = 1; i < w.energy.size(); ++i) {
      EXPECT_LE(w.energy[i], w.energy[i - 1] * (1.0 + 1e-12))
          << "level " << w.level << " iteration " << i;
    }
  }
}

TEST(Tvl1, SmallFramesReduceFactorAndLevels) {
  const Texture tex(7);
  const Frame a = tex.render(40, 36), b = tex.render(40, 36, 1.0, 0.0);
  Tvl1Trace trace;
  const auto f = tvl1_flow(a, b, Tvl1Params{}, &trace);
  EXPECT_EQ(trace.downscale_used, 2);
  EXPECT_EQ(f.u.width, 40u);
  EXPECT_EQ(f.u.height, 36u);
  for (const auto& w : trace.warps) EXPECT_GE(std::min(w.width, w.height), 16u);
}

TEST(Tvl1, InvalidParamsAreConfigErrors) {
  Tvl1Params p;
  p.pyramid_scale = 1.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.lambda = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(SampleInstants, OnePerSecondAndAllFrames) {
  const auto one = sample_instants(240, 24.0, SamplingRate{1.0, false});
  ASSERT_EQ(one.size(), 10u);
  EXPECT_EQ(one.front(), (std::pair<std::size_t, std::size_t>{0, 1}));
  EXPECT_EQ(one[1].first, 24u);
  for (const auto& [t, n] : one) EXPECT_EQ(n, t + 1);
  EXPECT_EQ(sample_instants(240, 24.0, SamplingRate::every_frame()).size(), 239u);
}

TEST(SampleInstants, TwoFrameVideoGivesOnePair) {
  for (double rate : {0.1, 1.0, 30.0}) {
    EXPECT_EQ(sample_instants(2, 24.0, SamplingRate{rate, false}).size(), 1u);
  }
  EXPECT_EQ(sample_instants(2, 24.0, SamplingRate::every_frame()).size(), 1u);
}

TEST(FlowFile, RoundTripAndLayout) {
  FlowField f{Plane(3, 2), Plane(3, 2), 1.0};
  for (std::size_t i = 0; i < 6; ++i) {
    f.u.data[i] = 0.5f * i;
    f.v.data[i] = -1.0f * i;
  }
  const auto path = (fs::temp_directory_path() / "vision_views_test.vsnf").string();
  save_flow(f, path);
  EXPECT_EQ(fs::file_size(path), 12u + 6 * 8);
  const auto g = load_flow(path);
  EXPECT_EQ(g.u, f.u);
  EXPECT_EQ(g.v, f.v);
  fs::resize_file(path, 20);
  EXPECT_THROW(load_flow(path), FormatError);
  fs::remove(path);
}
