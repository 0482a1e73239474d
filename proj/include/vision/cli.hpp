#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "vision/evalkit.hpp"
#include "vision/quality.hpp"
#include "vision/trainer.hpp"

namespace vision {

/// Flat key=value settings. Every key has a default; unknown keys are
/// rejected. Values are parsed when a typed view is requested.
class RunConfig {
 public:
  RunConfig();

  /// Throws ConfigError for an unknown key.
  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  /// "key=value" lines, '#' starts a comment, blank lines ignored.
  void load_file(const std::string& path);
  void load_text(const std::string& text, const std::string& origin = "<text>");

  static const std::map<std::string, std::string>& defaults();

  TrainConfig train_config() const;
  QualityConfig quality_config() const;
  LinearEvalConfig linear_eval_config() const;
  std::uint64_t seed() const;

 private:
  double number(const std::string& key) const;
  std::size_t count(const std::string& key) const;

  std::map<std::string, std::string> values_;
};

/// "1" (or any positive pairs-per-second value) or "all".
SamplingRate parse_sampling(const std::string& s);

/// Scene sets from <root>/<scene_id>/<version_id>/, both levels in name order.
std::vector<SceneSet> load_scene_tree(const std::string& root);

/// Every video (frame directory or .raw file) directly under dir, in name order.
std::vector<std::pair<std::string, Video>> load_video_dir(const std::string& dir);

/// Entry point behind the `vision` tool. args excludes the program name.
/// Returns 0 on success, 2 on usage errors and 1 on any other failure, which
/// is reported on err as one line: error kind=<kind> message="<text>".
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vision
