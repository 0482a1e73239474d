#include "vision/distort.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "vision/synth.hpp"

namespace fs = std::filesystem;
using namespace vision;

namespace {

Video from_planes(std::vector<Plane> planes, double fps = 25.0) {
  return make_video(std::move(planes), fps);
}

Video constant_video(std::size_t w, std::size_t h, std::size_t n, float value) {
  return from_planes(std::vector<Plane>(n, Plane(w, h, value)));
}

Video gradient_video(std::size_t w, std::size_t h, std::size_t n) {
  Plane p(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) p.at(x, y) = 0.1f + 0.8f * (x + y) / float(w + h);
  return from_planes(std::vector<Plane>(n, p));
}

Video checkerboard_video(std::size_t w, std::size_t h, std::size_t n) {
  Plane p(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) p.at(x, y) = (x + y) % 2 ? 1.0f : 0.0f;
  return from_planes(std::vector<Plane>(n, p));
}

double mae(const Video& a, const Video& b) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t i = 0; i < a.frames[t].luma.size(); ++i) {
      s += std::abs(a.frames[t].luma.data[i] - b.frames[t].luma.data[i]);
      ++n;
    }
  }
  return s / static_cast<double>(n);
}

double psnr(const Video& a, const Video& b) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t i = 0; i < a.frames[t].luma.size(); ++i) {
      const double d = a.frames[t].luma.data[i] - b.frames[t].luma.data[i];
      s += d * d;
      ++n;
    }
  }
  return 10.0 * std::log10(1.0 / (s / static_cast<double>(n)));
}

double variance(const Plane& p) {
  double m = 0.0, s = 0.0;
  for (float v : p.data) m += v;
  m /= static_cast<double>(p.size());
  for (float v : p.data) s += (v - m) * (v - m);
  return s / static_cast<double>(p.size());
}

double correlation(const Plane& a, const Plane& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a.data[i];
    mb += b.data[i];
  }
  ma /= a.size();
  mb /= b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a.data[i] - ma) * (b.data[i] - mb);
    saa += (a.data[i] - ma) * (a.data[i] - ma);
    sbb += (b.data[i] - mb) * (b.data[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

bool bit_identical(const Video& a, const Video& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t t = 0; t < a.size(); ++t) {
    if (a.frames[t].luma.data != b.frames[t].luma.data) return false;
  }
  return true;
}

Video scene(std::uint64_t seed, std::size_t frames = 24) {
  SynthConfig c;
  c.width = 64;
  c.height = 48;
  c.frames = frames;
  return synth_scene(c, seed);
}

}  // namespace

TEST(BlockQuantize, MinimumQscaleOnSmoothGradientIsNearLossless) {
  const Video v = gradient_video(64, 64, 2);
  EXPECT_GT(psnr(v, block_quantize(v, 1.0)), 40.0);
}

TEST(BlockQuantize, SeverityIncreasesWithQscale) {
  const Video v = scene(1);
  const double e1 = mae(v, block_quantize(v, 1)), e10 = mae(v, block_quantize(v, 10)),
               e20 = mae(v, block_quantize(v, 20));
  EXPECT_LT(e1, e10);
  EXPECT_LT(e10, e20);
  EXPECT_GT(e20, 3.0 * e1);
}

TEST(BlockQuantize, ConstantGrayIsDcOnly) {
  for (float g : {0.0f, 0.3f, 0.71f, 1.0f}) {
    const Video v = constant_video(20, 13, 2, g);
    const Video q = block_quantize(v, 20);
    for (float x : q.frames[1].luma.data) EXPECT_NEAR(x, g, 0.5 / 255.0 + 1e-6);
  }
}

TEST(BlockQuantize, CrfCurveIsMonotone) {
  const Video v = scene(2);
  double prev = 0.0;
  for (double crf : {10.0, 30.0, 50.0}) {
    DistortionSpec s{DistortionKind::block_quantize, crf, {{"curve", "crf"}}};
    const double e = mae(v, apply_distortion(v, s, 0));
    EXPECT_GT(e, prev) << "crf " << crf;
    prev = e;
  }
  EXPECT_DOUBLE_EQ(qscale_from_crf(18.0), 1.0);
  EXPECT_DOUBLE_EQ(qscale_from_crf(30.0), 4.0);
}

TEST(Rescale, FactorOneIsPassthroughAndDimsPreserved) {
  const Video v = scene(3, 4);
  EXPECT_TRUE(bit_identical(v, rescale_updown(v, 1.0)));
  for (double f : {2.0, 4.0, 8.0}) {
    const Video r = rescale_updown(v, f);
    EXPECT_EQ(r.width(), v.width());
    EXPECT_EQ(r.height(), v.height());
    EXPECT_EQ(r.size(), v.size());
  }
}

TEST(Rescale, Factor8CollapsesCheckerboard) {
  const Video v = checkerboard_video(64, 64, 1);
  const Video r8 = rescale_updown(v, 8), r2 = rescale_updown(v, 2);
  EXPECT_LT(variance(r8.frames[0].luma), 1e-4);
  EXPECT_GT(mae(v, r8), mae(v, r2) - 1e-9);
  const Video s = scene(4, 2);
  EXPECT_GT(mae(s, rescale_updown(s, 8)), mae(s, rescale_updown(s, 2)));
}

TEST(TemporalInterp, StaticVideoUnchanged) {
  const Video v = from_planes(std::vector<Plane>(9, scene(5, 2).frames[0].luma));
  for (double r : {0.5, 0.33, 0.25}) EXPECT_TRUE(bit_identical(v, temporal_interp(v, r)));
}

TEST(TemporalInterp, DroppedFramesBlendKeptNeighbours) {
  // kept frames (0, 2, 4, ...) alternate black and white
  std::vector<Plane> planes;
  for (int t = 0; t < 8; ++t) planes.emplace_back(4, 4, (t / 2) % 2 ? 1.0f : 0.0f);
  const Video out = temporal_interp(from_planes(planes), 0.5);
  for (int t : {1, 3, 5}) {
    for (float x : out.frames[t].luma.data) EXPECT_FLOAT_EQ(x, 0.5f) << "frame " << t;
  }
  for (int t : {0, 2, 4, 6}) EXPECT_EQ(out.frames[t].luma.data, planes[t].data);
  EXPECT_EQ(out.frames[7].luma.data, planes[6].data);  // tail holds the last kept frame
}

TEST(TemporalInterp, FrameCountPreservedAndShortVideoRejected) {
  const Video v = scene(6, 13);
  for (double r : {0.25, 0.33, 0.5}) EXPECT_EQ(temporal_interp(v, r).size(), v.size());
  EXPECT_THROW(temporal_interp(scene(6, 3), 0.25), DataError);
}

TEST(BlurAndNoise, ZeroSigmaIsPassthrough) {
  const Video v = scene(7, 3);
  EXPECT_TRUE(bit_identical(v, gaussian_blur(v, 0.0)));
  EXPECT_TRUE(bit_identical(v, white_noise(v, 0.0, 1)));
}

TEST(BlurAndNoise, NoiseIsReproducibleAndBlurLowersVariance) {
  const Video v = scene(8, 3);
  EXPECT_TRUE(bit_identical(white_noise(v, 0.05, 9), white_noise(v, 0.05, 9)));
  EXPECT_FALSE(bit_identical(white_noise(v, 0.05, 9), white_noise(v, 0.05, 10)));
  const Video b = gaussian_blur(v, 1.5);
  for (std::size_t t = 0; t < v.size(); ++t) {
    EXPECT_LT(variance(b.frames[t].luma), variance(v.frames[t].luma));
  }
}

TEST(Distortions, SeverityMonotoneOverLevelGrids) {
  const Video v = scene(9, 16);
  auto check = [&](DistortionKind k, std::vector<double> levels) {
    double prev = -1.0;
    for (double l : levels) {
      const double e = mae(v, apply_distortion(v, DistortionSpec{k, l, {}}, 11));
      EXPECT_GE(e, prev) << to_string(k) << " level " << l;
      prev = e;
    }
  };
  check(DistortionKind::block_quantize, {1, 4, 10, 20});
  check(DistortionKind::rescale, {1, 2, 4, 8});
  check(DistortionKind::temporal_interp, {1.0, 0.5, 0.33, 0.25});
  check(DistortionKind::gaussian_blur, {0, 0.5, 1, 2, 4});
  check(DistortionKind::white_noise, {0, 0.02, 0.05, 0.1});
}

TEST(DistortionSpec, ParseLabelRoundTripAndValidation) {
  for (const auto& s : default_training_specs()) EXPECT_EQ(DistortionSpec::parse(s.label()), s);
  EXPECT_EQ(DistortionSpec::parse("identity").kind, DistortionKind::identity);
  EXPECT_THROW(DistortionSpec::parse("block_quantize:25"), ConfigError);
  EXPECT_THROW(DistortionSpec::parse("block_quantize:5:curve=crf"), ConfigError);
  EXPECT_THROW(DistortionSpec::parse("temporal_interp:0"), ConfigError);
  EXPECT_THROW(DistortionSpec::parse("sharpen:2"), ConfigError);
  EXPECT_THROW(DistortionSpec::parse("rescale"), ConfigError);
  const auto ext = DistortionSpec::parse("external:3:command=ffmpeg -i {in} -vf a:b {out}");
  EXPECT_EQ(ext.params.at("command"), "ffmpeg -i {in} -vf a:b {out}");
}

TEST(SceneSet, ElevenDefaultSpecsGiveElevenAlignedVersions) {
  const Video v = scene(10, 12);
  const auto specs = default_training_specs();
  ASSERT_EQ(specs.size(), 11u);
  EXPECT_EQ(specs.front().kind, DistortionKind::identity);
  const SceneSet set = build_scene_set("s", v, specs, 5);
  ASSERT_EQ(set.size(), 11u);
  EXPECT_TRUE(bit_identical(set.versions[0], v));
  for (const auto& ver : set.versions) {
    EXPECT_EQ(ver.size(), v.size());
    EXPECT_EQ(ver.width(), v.width());
    EXPECT_EQ(ver.height(), v.height());
  }
}

TEST(SceneSet, DuplicateOrTooFewSpecsRejected) {
  const Video v = scene(11, 4);
  const DistortionSpec a{DistortionKind::gaussian_blur, 1.0, {}};
  EXPECT_THROW(build_scene_set("s", v, {a, a}, 1), ConfigError);
  EXPECT_THROW(build_scene_set("s", v, {a}, 1), ConfigError);
}

TEST(SceneSet, DeterministicGivenSeed) {
  const Video v = scene(12, 6);
  const std::vector<DistortionSpec> specs = {{DistortionKind::identity, 0, {}},
                                             {DistortionKind::white_noise, 0.05, {}},
                                             {DistortionKind::white_noise, 0.1, {}}};
  const auto a = build_scene_set("s", v, specs, 77), b = build_scene_set("s", v, specs, 77);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bit_identical(a.versions[i], b.versions[i]));
  // the two noise versions draw from different streams
  EXPECT_FALSE(bit_identical(white_noise(v, 0.1, 0), a.versions[2]) &&
               bit_identical(white_noise(v, 0.05, 0), a.versions[1]));
}

TEST(SceneSet, ContentAlignedAcrossVersions) {
  const Video v = scene(13, 16);
  const SceneSet set = build_scene_set("s", v, default_training_specs(), 3);
  const std::size_t t = 2;
  for (std::size_t k = 1; k < set.size(); ++k) {
    const double cross_version = correlation(set.versions[0].frames[t].luma, set.versions[k].frames[t].luma);
    const double cross_time =
        correlation(set.versions[k].frames[t].luma, set.versions[k].frames[t + 10].luma);
    EXPECT_GT(cross_version, cross_time) << set.specs[k].label();
  }
}

TEST(External, CopyCommandRoundTrips) {
  const Video v = scene(14, 3);
  const Video out = external_transcode(v, "cp {in} {out}", 1.0);
  ASSERT_EQ(out.size(), v.size());
  for (std::size_t t = 0; t < v.size(); ++t) {
    for (std::size_t i = 0; i < v.frames[t].luma.size(); ++i) {
      EXPECT_NEAR(out.frames[t].luma.data[i], v.frames[t].luma.data[i], 0.5 / 255.0 + 1e-6);
    }
  }
  EXPECT_THROW(external_transcode(v, "false", 1.0), DataError);
}

TEST(VideoIo, RawAndPgmRoundTrip) {
  const Video v = scene(15, 3);
  const auto dir = fs::temp_directory_path() / "vision_video_io";
  fs::remove_all(dir);
  const auto raw = (dir / "clip.raw").string();
  save_video(v, raw);
  const Video r = load_video(raw);
  save_video(v, (dir / "pgm").string());
  const Video p = load_video((dir / "pgm").string());
  for (const Video* w : {&r, &p}) {
    ASSERT_EQ(w->size(), v.size());
    EXPECT_EQ(w->fps, v.fps);
    for (std::size_t t = 0; t < v.size(); ++t)
      for (std::size_t i = 0; i < v.frames[t].luma.size(); ++i)
        EXPECT_NEAR(w->frames[t].luma.data[i], v.frames[t].luma.data[i], 0.5 / 255.0 + 1e-6);
  }
  EXPECT_TRUE(bit_identical(r, p));
  fs::remove_all(dir);
}

TEST(VideoIo, ColorPpmIsConvertedToLuma) {
  const auto dir = fs::temp_directory_path() / "vision_video_ppm";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "a.ppm", std::ios::binary);
    f << "P6\n# comment\n1 1\n255\n";
    f.put(static_cast<char>(255)).put(0).put(0);
    std::ofstream m(dir / "meta.txt");
    m << "fps=30\n";
  }
  const Video v = load_video(dir.string());
  EXPECT_NEAR(v.frames[0].luma.at(0, 0), 0.299, 1.0 / 255.0);
  EXPECT_EQ(v.fps, 30.0);
  fs::remove_all(dir);
}

TEST(VideoIo, BrokenInputsAreIngestionErrors) {
  const auto dir = fs::temp_directory_path() / "vision_video_bad";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto raw = (dir / "x.raw").string();
  {
    std::ofstream f(raw, std::ios::binary);
    f << "abcde";
  }
  EXPECT_THROW(load_video(raw), IngestionError);  // no sidecar
  {
    std::ofstream s(raw + ".txt");
    s << "width=2\nheight=2\nfps=10\n";
  }
  EXPECT_THROW(load_video(raw), IngestionError);  // 5 bytes is not whole frames
  EXPECT_THROW(load_video((dir / "missing").string()), IngestionError);
  fs::remove_all(dir);
}
