#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vision/video.hpp"

namespace vision {

enum class DistortionKind {
  identity,
  block_quantize,
  rescale,
  temporal_interp,
  gaussian_blur,
  white_noise,
  external
};

std::string to_string(DistortionKind k);
DistortionKind parse_distortion_kind(const std::string& s);

/// Level ranges:
///   identity         0
///   block_quantize   qscale curve 1..20 (default), crf curve 10..50
///                    (params["curve"] = "crf")
///   rescale          factor >= 1 (1 is a passthrough)
///   temporal_interp  rate in (0, 1] (1 is a passthrough)
///   gaussian_blur    sigma in [0, 20]
///   white_noise      sigma in [0, 1]
///   external         any level >= 0; params["command"] holds the template
struct DistortionSpec {
  DistortionKind kind = DistortionKind::identity;
  double level = 0.0;
  std::map<std::string, std::string> params;

  void validate() const;
  /// Canonical text form, e.g. "block_quantize:4" or "block_quantize:30:curve=crf".
  std::string label() const;
  static DistortionSpec parse(const std::string& text);

  bool operator==(const DistortionSpec&) const = default;
};

/// Quantizer step multiplier for a crf value: doubles every 6 units with
/// crf 18 at qscale 1.
double qscale_from_crf(double crf);

Video block_quantize(const Video& v, double qscale);
Video rescale_updown(const Video& v, double factor);
Video temporal_interp(const Video& v, double rate);
Video gaussian_blur(const Video& v, double sigma);
Video white_noise(const Video& v, double sigma, std::uint64_t seed);

/// Runs a user-supplied transcoder. `{in}`, `{out}` and `{level}` in the
/// template are substituted; the input is written as a raw video and the
/// command must write a raw file of the same geometry to `{out}`.
Video external_transcode(const Video& v, const std::string& command_template, double level);

Video apply_distortion(const Video& v, const DistortionSpec& spec, std::uint64_t seed);

struct SceneSet {
  std::string scene_id;
  std::vector<DistortionSpec> specs;
  std::vector<Video> versions;

  std::size_t size() const { return versions.size(); }
};

/// Version i is apply_distortion(source, specs[i], derived seed). Specs must
/// be pairwise distinct and at least two.
SceneSet build_scene_set(const std::string& scene_id, const Video& source,
                         const std::vector<DistortionSpec>& specs, std::uint64_t seed);

/// Eleven-version ladder used by default: identity, three qscale levels, two
/// crf levels, three rescale factors and two frame-rate reductions.
std::vector<DistortionSpec> default_training_specs();

}  // namespace vision
