#include "vision/distort.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>

#include <unistd.h>

#include "vision/seed.hpp"

namespace fs = std::filesystem;

namespace vision {

namespace {

// MPEG-2 default intra quantizer matrix.
constexpr std::array<int, 64> kIntraMatrix = {
    8,  16, 19, 22, 26, 27, 29, 34,  //
    16, 16, 22, 24, 27, 29, 34, 37,  //
    19, 22, 26, 27, 29, 34, 34, 38,  //
    22, 22, 26, 27, 29, 34, 37, 40,  //
    22, 26, 27, 29, 32, 35, 40, 48,  //
    26, 27, 29, 32, 35, 40, 48, 58,  //
    26, 27, 29, 34, 38, 46, 56, 69,  //
    27, 29, 35, 38, 46, 56, 69, 83};
constexpr double kDcStep = 8.0;

struct Dct8 {
  double c[8][8];
  Dct8() {
    for (int k = 0; k < 8; ++k) {
      const double a = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int n = 0; n < 8; ++n) c[k][n] = a * std::cos((2 * n + 1) * k * std::numbers::pi / 16.0);
    }
  }
  // out = C in C^T
  void forward(const double in[64], double out[64]) const {
    double tmp[64];
    for (int k = 0; k < 8; ++k)
      for (int x = 0; x < 8; ++x) {
        double s = 0.0;
        for (int y = 0; y < 8; ++y) s += c[k][y] * in[y * 8 + x];
        tmp[k * 8 + x] = s;
      }
    for (int k = 0; k < 8; ++k)
      for (int l = 0; l < 8; ++l) {
        double s = 0.0;
        for (int x = 0; x < 8; ++x) s += tmp[k * 8 + x] * c[l][x];
        out[k * 8 + l] = s;
      }
  }
  // out = C^T in C
  void inverse(const double in[64], double out[64]) const {
    double tmp[64];
    for (int y = 0; y < 8; ++y)
      for (int l = 0; l < 8; ++l) {
        double s = 0.0;
        for (int k = 0; k < 8; ++k) s += c[k][y] * in[k * 8 + l];
        tmp[y * 8 + l] = s;
      }
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        double s = 0.0;
        for (int l = 0; l < 8; ++l) s += tmp[y * 8 + l] * c[l][x];
        out[y * 8 + x] = s;
      }
  }
};

Plane quantize_plane(const Plane& p, double qscale, const Dct8& dct) {
  Plane out(p.width, p.height);
  double block[64], coef[64], rec[64];
  for (std::size_t by = 0; by < p.height; by += 8) {
    for (std::size_t bx = 0; bx < p.width; bx += 8) {
      // partial edge blocks are completed by edge replication
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
          const std::size_t sx = std::min(bx + x, p.width - 1), sy = std::min(by + y, p.height - 1);
          block[y * 8 + x] = 255.0 * p.at(sx, sy);
        }
      }
      dct.forward(block, coef);
      for (int i = 0; i < 64; ++i) {
        const double step = i == 0 ? kDcStep : qscale * kIntraMatrix[i] / 8.0;
        coef[i] = std::round(coef[i] / step) * step;
      }
      dct.inverse(coef, rec);
      for (int y = 0; y < 8 && by + y < p.height; ++y) {
        for (int x = 0; x < 8 && bx + x < p.width; ++x) {
          out.at(bx + x, by + y) = static_cast<float>(std::clamp(rec[y * 8 + x] / 255.0, 0.0, 1.0));
        }
      }
    }
  }
  return out;
}

template <class F>
Video map_frames(const Video& v, F&& f) {
  v.validate();
  Video out;
  out.fps = v.fps;
  out.frames.reserve(v.size());
  for (const auto& fr : v.frames) out.frames.push_back(Frame{f(fr.luma), fr.timestamp_index});
  return out;
}

std::string format_level(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

std::string to_string(DistortionKind k) {
  switch (k) {
    case DistortionKind::identity: return "identity";
    case DistortionKind::block_quantize: return "block_quantize";
    case DistortionKind::rescale: return "rescale";
    case DistortionKind::temporal_interp: return "temporal_interp";
    case DistortionKind::gaussian_blur: return "gaussian_blur";
    case DistortionKind::white_noise: return "white_noise";
    case DistortionKind::external: return "external";
  }
  return "unknown";
}

DistortionKind parse_distortion_kind(const std::string& s) {
  for (auto k : {DistortionKind::identity, DistortionKind::block_quantize, DistortionKind::rescale,
                 DistortionKind::temporal_interp, DistortionKind::gaussian_blur,
                 DistortionKind::white_noise, DistortionKind::external}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown distortion kind '" + s + "'");
}

void DistortionSpec::validate() const {
  const std::string name = to_string(kind);
  require(std::isfinite(level), name + ": level must be finite");
  switch (kind) {
    case DistortionKind::identity:
      require(level == 0.0, "identity: level must be 0");
      break;
    case DistortionKind::block_quantize: {
      const auto it = params.find("curve");
      const std::string curve = it == params.end() ? "qscale" : it->second;
      if (curve == "qscale") {
        require(level >= 1.0 && level <= 20.0, "block_quantize: qscale must lie in [1,20]");
      } else if (curve == "crf") {
        require(level >= 10.0 && level <= 50.0, "block_quantize: crf must lie in [10,50]");
      } else {
        throw ConfigError("block_quantize: unknown curve '" + curve + "'");
      }
      break;
    }
    case DistortionKind::rescale:
      require(level >= 1.0 && level <= 64.0, "rescale: factor must lie in [1,64]");
      break;
    case DistortionKind::temporal_interp:
      require(level > 0.0 && level <= 1.0, "temporal_interp: rate must lie in (0,1]");
      break;
    case DistortionKind::gaussian_blur:
      require(level >= 0.0 && level <= 20.0, "gaussian_blur: sigma must lie in [0,20]");
      break;
    case DistortionKind::white_noise:
      require(level >= 0.0 && level <= 1.0, "white_noise: sigma must lie in [0,1]");
      break;
    case DistortionKind::external:
      require(level >= 0.0, "external: level must be non-negative");
      require(params.count("command") && !params.at("command").empty(),
              "external: a command template is required");
      break;
  }
}

std::string DistortionSpec::label() const {
  std::string s = to_string(kind) + ":" + format_level(level);
  for (const auto& [k, v] : params) s += ":" + k + "=" + v;
  return s;
}

DistortionSpec DistortionSpec::parse(const std::string& text) {
  DistortionSpec spec;
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto colon = text.find(':', start);
    // the external command template may itself contain ':'
    if (!parts.empty() && parts[0] == "external" && parts.size() >= 2) {
      parts.push_back(text.substr(start));
      break;
    }
    parts.push_back(text.substr(start, colon == std::string::npos ? std::string::npos : colon - start));
    if (colon == std::string::npos) break;
    start = colon + 1;
  }
  spec.kind = parse_distortion_kind(parts[0]);
  if (parts.size() >= 2) {
    const auto& lv = parts[1];
    const auto r = std::from_chars(lv.data(), lv.data() + lv.size(), spec.level);
    if (r.ec != std::errc() || r.ptr != lv.data() + lv.size()) {
      throw ConfigError("bad distortion level '" + lv + "' in '" + text + "'");
    }
  } else if (spec.kind != DistortionKind::identity) {
    throw ConfigError("distortion '" + text + "' needs a level");
  }
  for (std::size_t i = 2; i < parts.size(); ++i) {
    const auto eq = parts[i].find('=');
    if (eq == std::string::npos) throw ConfigError("bad distortion parameter '" + parts[i] + "'");
    spec.params[parts[i].substr(0, eq)] = parts[i].substr(eq + 1);
  }
  spec.validate();
  return spec;
}

double qscale_from_crf(double crf) { return std::exp2((crf - 18.0) / 6.0); }

Video block_quantize(const Video& v, double qscale) {
  if (!(qscale > 0.0)) throw ConfigError("block_quantize: qscale must be positive");
  const Dct8 dct;
  return map_frames(v, [&](const Plane& p) { return quantize_plane(p, qscale, dct); });
}

Video rescale_updown(const Video& v, double factor) {
  if (!(factor >= 1.0)) throw ConfigError("rescale: factor must be >= 1");
  if (factor == 1.0) return v;
  return map_frames(v, [&](const Plane& p) {
    const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(p.width / factor)));
    const auto h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(p.height / factor)));
    return resize_bilinear(resize_bilinear(p, w, h), p.width, p.height);
  });
}

Video temporal_interp(const Video& v, double rate) {
  if (!(rate > 0.0 && rate <= 1.0)) throw ConfigError("temporal_interp: rate must lie in (0,1]");
  v.validate();
  const auto n = static_cast<std::size_t>(std::lround(1.0 / rate));
  if (v.size() < n) {
    throw DataError("temporal_interp: video has " + std::to_string(v.size()) +
                    " frames, need at least " + std::to_string(n) + " for rate " + format_level(rate));
  }
  if (n <= 1) return v;
  Video out = v;
  for (std::size_t t = 0; t < v.size(); ++t) {
    const std::size_t k0 = t / n * n, k1 = k0 + n;
    if (t == k0) continue;
    if (k1 >= v.size()) {
      out.frames[t].luma = v.frames[k0].luma;  // tail: hold the last kept frame
      continue;
    }
    const float a = static_cast<float>(t - k0) / static_cast<float>(n);
    const auto& p0 = v.frames[k0].luma.data;
    const auto& p1 = v.frames[k1].luma.data;
    auto& q = out.frames[t].luma.data;
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = p0[i] + a * (p1[i] - p0[i]);
  }
  return out;
}

Video gaussian_blur(const Video& v, double sigma) {
  if (!(sigma >= 0.0)) throw ConfigError("gaussian_blur: sigma must be non-negative");
  if (sigma == 0.0) return v;
  return map_frames(v, [&](const Plane& p) { return gaussian_filter(p, sigma); });
}

Video white_noise(const Video& v, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ConfigError("white_noise: sigma must be non-negative");
  if (sigma == 0.0) return v;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  return map_frames(v, [&](const Plane& p) {
    Plane out = p;
    for (float& x : out.data) x = static_cast<float>(std::clamp(x + noise(rng), 0.0, 1.0));
    return out;
  });
}

Video external_transcode(const Video& v, const std::string& command_template, double level) {
  v.validate();
  static std::uint64_t counter = 0;
  const auto dir = fs::temp_directory_path() /
                   ("vision_ext_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::create_directories(dir);
  const auto in = (dir / "in.raw").string(), out = (dir / "out.raw").string();
  save_video(v, in);
  std::string cmd = command_template;
  auto substitute = [&](const std::string& key, const std::string& value) {
    for (std::size_t pos; (pos = cmd.find(key)) != std::string::npos;) cmd.replace(pos, key.size(), value);
  };
  substitute("{in}", in);
  substitute("{out}", out);
  substitute("{level}", format_level(level));
  const int status = std::system(cmd.c_str());
  if (status != 0) {
    fs::remove_all(dir);
    throw DataError("external transcoder exited with status " + std::to_string(status) + ": " + cmd);
  }
  fs::copy_file(in + ".txt", out + ".txt", fs::copy_options::overwrite_existing);
  Video result;
  try {
    result = load_video(out);
  } catch (...) {
    fs::remove_all(dir);
    throw;
  }
  fs::remove_all(dir);
  result.fps = v.fps;
  if (result.size() != v.size() || result.width() != v.width() || result.height() != v.height()) {
    throw DataError("external transcoder changed the video geometry or length");
  }
  return result;
}

Video apply_distortion(const Video& v, const DistortionSpec& spec, std::uint64_t seed) {
  spec.validate();
  switch (spec.kind) {
    case DistortionKind::identity: return v;
    case DistortionKind::block_quantize: {
      const auto it = spec.params.find("curve");
      const bool crf = it != spec.params.end() && it->second == "crf";
      return block_quantize(v, crf ? qscale_from_crf(spec.level) : spec.level);
    }
    case DistortionKind::rescale: return rescale_updown(v, spec.level);
    case DistortionKind::temporal_interp: return temporal_interp(v, spec.level);
    case DistortionKind::gaussian_blur: return gaussian_blur(v, spec.level);
    case DistortionKind::white_noise: return white_noise(v, spec.level, seed);
    case DistortionKind::external:
      return external_transcode(v, spec.params.at("command"), spec.level);
  }
  throw ConfigError("unhandled distortion kind");
}

SceneSet build_scene_set(const std::string& scene_id, const Video& source,
                         const std::vector<DistortionSpec>& specs, std::uint64_t seed) {
  source.validate();
  if (specs.size() < 2) throw ConfigError("a scene set needs at least two distortion specs");
  std::set<std::string> seen;
  for (const auto& s : specs) {
    s.validate();
    if (!seen.insert(s.label()).second) throw ConfigError("duplicate distortion spec " + s.label());
  }
  SceneSet set{scene_id, specs, {}};
  set.versions.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    set.versions.push_back(apply_distortion(source, specs[i], derive_seed(seed, i)));
    const Video& out = set.versions.back();
    if (out.size() != source.size() || out.width() != source.width() ||
        out.height() != source.height()) {
      throw StateError("distortion " + specs[i].label() + " changed video length or dims");
    }
  }
  return set;
}

std::vector<DistortionSpec> default_training_specs() {
  using K = DistortionKind;
  const std::map<std::string, std::string> crf{{"curve", "crf"}};
  return {
      {K::identity, 0.0, {}},         {K::block_quantize, 4.0, {}},   {K::block_quantize, 12.0, {}},
      {K::block_quantize, 20.0, {}},  {K::block_quantize, 30.0, crf}, {K::block_quantize, 50.0, crf},
      {K::rescale, 2.0, {}},          {K::rescale, 4.0, {}},          {K::rescale, 8.0, {}},
      {K::temporal_interp, 0.5, {}},  {K::temporal_interp, 0.25, {}},
  };
}

}  // namespace vision
