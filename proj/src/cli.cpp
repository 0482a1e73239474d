#include "vision/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "vision/distort.hpp"
#include "vision/errors.hpp"
#include "vision/seed.hpp"
#include "vision/textfmt.hpp"
#include "vision/video.hpp"

namespace fs = std::filesystem;

namespace vision {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError(what + ": \"" + s + "\" is not a number");
  }
  return v;
}

std::size_t parse_count(const std::string& s, const std::string& what) {
  std::size_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ConfigError(what + ": \"" + s + "\" is not a non-negative integer");
  }
  return v;
}

bool parse_bool(const std::string& s, const std::string& what) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(what + ": \"" + s + "\" is not a boolean");
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
    if (c == '"') c = '\'';
  }
  return s;
}

std::string safe_name(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-') c = '_';
  }
  return out;
}

bool is_video_entry(const fs::directory_entry& e) {
  if (e.is_directory()) return true;
  return e.is_regular_file() && is_raw_video_path(e.path().string());
}

std::string video_id(const fs::path& p) {
  return is_raw_video_path(p.string()) ? p.stem().string() : p.filename().string();
}

std::vector<fs::path> sorted_entries(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IngestionError(dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (is_video_entry(e)) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name, const std::string& path) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError(path + ": no column \"" + name + "\"");
    return static_cast<std::size_t>(it - header.begin());
  }
};

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path);
  CsvTable t;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    auto cells = split(line, ',');
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw FormatError(path + ": line " + std::to_string(n) + " has " + std::to_string(cells.size()) +
                        " fields, expected " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw FormatError(path + ": empty file");
  return t;
}

std::map<std::string, double> read_keyed_column(const std::string& path, const std::string& column) {
  const CsvTable t = read_csv(path);
  const std::size_t id = t.column("video_id", path), c = t.column(column, path);
  std::map<std::string, double> out;
  for (const auto& r : t.rows) {
    if (!out.emplace(r[id], parse_double(r[c], path + " " + column)).second) {
      throw FormatError(path + ": duplicate video_id " + r[id]);
    }
  }
  return out;
}

struct Args {
  std::string config_file;
  std::vector<std::string> overrides;
  // shared by several commands
  std::string data, out, weights, corpus, videos, scores, mos, features, trace, features_out;
  std::string column = "VISION";
  std::string fps;
  std::vector<std::string> video_list, specs;
  std::size_t index = 0;
  int downscale = -1;
  std::size_t splits = 0;
  std::string seed, ridge;
};

RunConfig make_config(const Args& a) {
  RunConfig c;
  if (!a.config_file.empty()) c.load_file(a.config_file);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got \"" + kv + "\"");
    c.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  return c;
}

void cmd_train(const Args& a, std::ostream& out) {
  const RunConfig rc = make_config(a);
  const TrainConfig tc = rc.train_config();
  const auto scenes = load_scene_tree(a.data);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(scenes, tc);
  save_encoder_set(r.weights, a.out);
  if (!a.trace.empty()) write_loss_trace(r.trace, a.trace);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out << "trained scenes=" << scenes.size() << " iterations=" << tc.iterations
      << " final_loss_fd=" << to_text(r.trace.empty() ? 0.0 : r.trace.back().loss_fd)
      << " final_loss_do=" << to_text(r.trace.empty() ? 0.0 : r.trace.back().loss_do)
      << " seconds=" << to_text(std::round(secs * 10) / 10) << "\n";
}

void cmd_distort(const Args& a, std::ostream& out) {
  const RunConfig rc = make_config(a);
  const Video src = load_video(a.video_list.at(0));
  std::vector<DistortionSpec> specs;
  for (const auto& s : a.specs) specs.push_back(DistortionSpec::parse(s));
  fs::create_directories(a.out);
  for (std::size_t k = 0; k < specs.size(); ++k) {
    specs[k].validate();
    const Video v = apply_distortion(src, specs[k], derive_seed(rc.seed(), k));
    char prefix[32];
    std::snprintf(prefix, sizeof prefix, "%02zu_", k);
    const fs::path dst = fs::path(a.out) / (prefix + safe_name(specs[k].label()));
    save_video(v, dst.string());
    out << dst.string() << "\n";
  }
}

std::vector<Video> just_videos(std::vector<std::pair<std::string, Video>> v) {
  std::vector<Video> out;
  for (auto& p : v) out.push_back(std::move(p.second));
  return out;
}

void cmd_corpus(const Args& a, std::ostream& out, std::ostream& err) {
  const RunConfig rc = make_config(a);
  const EncoderSet w = load_encoder_set(a.weights);
  const Corpus c = build_corpus(just_videos(load_video_dir(a.videos)), w, rc.quality_config());
  for (const auto& msg : c.warnings) err << "warning " << msg << "\n";
  save_corpus(c, a.out);
  out << "corpus samples=" << c.fd.sample_count << " dim=" << c.fd.dim()
      << " mode=" << to_string(c.mode) << "\n";
}

void cmd_score(const Args& a, std::ostream& out) {
  RunConfig rc = make_config(a);
  if (!a.fps.empty()) rc.set("fps", a.fps);
  const QualityConfig qc = rc.quality_config();
  const EncoderSet w = load_encoder_set(a.weights);
  const Corpus c = load_corpus(a.corpus);
  std::vector<std::pair<std::string, Video>> videos;
  for (const auto& v : a.video_list) videos.emplace_back(video_id(v), load_video(v));
  if (!a.videos.empty()) {
    for (auto& v : load_video_dir(a.videos)) videos.push_back(std::move(v));
  }
  if (videos.empty()) throw ConfigError("score needs --video or --videos");

  std::vector<ScoreRow> rows;
  for (const auto& [id, v] : videos) rows.push_back({id, score_video(v, w, c, qc)});
  if (a.out.empty()) {
    out << "video_id,Q_fd,Q_do,VISION\n";
    for (const auto& r : rows) {
      out << r.video_id << "," << to_text(r.score.Q_fd) << "," << to_text(r.score.Q_do) << ","
          << to_text(r.score.vision) << "\n";
    }
  } else {
    write_scores(rows, a.out);
  }
  if (!a.features_out.empty()) {
    std::ofstream f(a.features_out);
    if (!f) throw FormatError("cannot write " + a.features_out);
    f << "video_id";
    for (Eigen::Index i = 0; i < rows[0].score.pooled_features.size(); ++i) f << ",f" << i;
    f << "\n";
    for (const auto& r : rows) {
      f << r.video_id;
      for (Eigen::Index i = 0; i < r.score.pooled_features.size(); ++i) {
        f << "," << to_text(r.score.pooled_features(i));
      }
      f << "\n";
    }
  }
}

void cmd_eval(const Args& a, std::ostream& out) {
  const auto pred = read_keyed_column(a.scores, a.column);
  const auto mos = read_keyed_column(a.mos, "mos");
  std::vector<double> p, m;
  for (const auto& [id, v] : pred) {
    const auto it = mos.find(id);
    if (it == mos.end()) throw DataError("no MOS for video " + id);
    p.push_back(v);
    m.push_back(it->second);
  }
  const EvalReport r = evaluate(p, m);
  nlohmann::ordered_json j;
  j["n_videos"] = r.n_videos;
  j["srocc"] = r.srocc;
  j["plcc"] = r.plcc;
  j["raw_plcc"] = r.raw_plcc;
  j["logistic"] = {{"b1", r.logistic.params.b1},
                   {"b2", r.logistic.params.b2},
                   {"b3", r.logistic.params.b3},
                   {"b4", r.logistic.params.b4},
                   {"converged", r.logistic.converged}};
  if (a.out.empty()) {
    out << j.dump() << "\n";
  } else {
    std::ofstream f(a.out);
    f << j.dump() << "\n";
    if (!f) throw FormatError("cannot write " + a.out);
  }
}

void cmd_linear_eval(const Args& a, std::ostream& out) {
  RunConfig rc = make_config(a);
  if (a.splits > 0) rc.set("splits", std::to_string(a.splits));
  if (!a.seed.empty()) rc.set("seed", a.seed);
  if (!a.ridge.empty()) rc.set("ridge_lambda", a.ridge);
  const CsvTable t = read_csv(a.features);
  const std::size_t id = t.column("video_id", a.features);
  const auto mos = read_keyed_column(a.mos, "mos");
  Eigen::MatrixXd f(static_cast<Eigen::Index>(t.rows.size()),
                    static_cast<Eigen::Index>(t.header.size() - 1));
  std::vector<double> y;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto it = mos.find(t.rows[i][id]);
    if (it == mos.end()) throw DataError("no MOS for video " + t.rows[i][id]);
    y.push_back(it->second);
    for (std::size_t c = 0, k = 0; c < t.header.size(); ++c) {
      if (c == id) continue;
      f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k++)) =
          parse_double(t.rows[i][c], a.features);
    }
  }
  const LinearEvalResult r = linear_eval(f, y, rc.linear_eval_config());
  nlohmann::ordered_json j;
  j["n_videos"] = y.size();
  j["splits"] = r.split_srocc.size();
  j["median_srocc"] = r.median_srocc;
  out << j.dump() << "\n";
}

void cmd_flow(const Args& a, std::ostream& out) {
  const RunConfig rc = make_config(a);
  Tvl1Params p = rc.quality_config().flow;
  if (a.downscale > 0) p.downscale_factor = a.downscale;
  const Video v = load_video(a.video_list.at(0));
  if (a.index + 1 >= v.size()) {
    throw DataError("frame index " + std::to_string(a.index) + " has no successor in a " +
                    std::to_string(v.size()) + "-frame video");
  }
  const FlowField f = tvl1_flow(v.frames[a.index], v.frames[a.index + 1], p);
  save_flow(f, a.out);
  double mag = 0.0;
  for (std::size_t i = 0; i < f.u.size(); ++i) mag += std::hypot(f.u.data[i], f.v.data[i]);
  out << "flow width=" << f.u.width << " height=" << f.u.height
      << " mean_magnitude=" << to_text(mag / static_cast<double>(f.u.size())) << "\n";
}

}  // namespace

// ---- RunConfig

const std::map<std::string, std::string>& RunConfig::defaults() {
  static const std::map<std::string, std::string> d = {
      {"seed", "0"},
      {"temperature", "0.1"},
      {"scenes_per_batch", "8"},
      {"versions_per_scene", "11"},
      {"crop", "224"},
      {"learning_rate", "1e-4"},
      {"iterations", "5000"},
      {"random_crop", "false"},
      {"block_channels", "32,64,128,256"},
      {"train_flow_downscale", "1"},
      {"patch_size", "96"},
      {"sharpness_fraction", "0.85"},
      {"local_window", "7"},
      {"flow_lambda", "0.15"},
      {"flow_theta", "0.3"},
      {"flow_tau", "0.25"},
      {"flow_pyramid_scale", "0.5"},
      {"flow_levels", "5"},
      {"flow_warps", "5"},
      {"flow_inner_iterations", "30"},
      {"flow_downscale", "8"},
      {"fps", "1"},
      {"feature_mode", "fused"},
      {"epsilon_rel", "1e-6"},
      {"threads", "1"},
      {"ridge_lambda", "1"},
      {"splits", "100"},
      {"train_fraction", "0.8"},
  };
  return d;
}

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key \"" + key + "\"");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key \"" + key + "\"");
  return it->second;
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": expected key=value");
    }
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  load_text(ss.str(), path);
}

double RunConfig::number(const std::string& key) const { return parse_double(get(key), key); }
std::size_t RunConfig::count(const std::string& key) const { return parse_count(get(key), key); }

std::uint64_t RunConfig::seed() const {
  std::uint64_t v = 0;
  const std::string& s = get("seed");
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("seed: \"" + s + "\"");
  return v;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.scenes_per_batch = count("scenes_per_batch");
  t.versions_per_scene = count("versions_per_scene");
  t.temperature = number("temperature");
  t.crop = count("crop");
  t.learning_rate = number("learning_rate");
  t.iterations = count("iterations");
  t.seed = seed();
  t.random_crop = parse_bool(get("random_crop"), "random_crop");
  const auto widths = split(get("block_channels"), ',');
  if (widths.size() != 4) throw ConfigError("block_channels needs four comma-separated widths");
  for (std::size_t i = 0; i < 4; ++i) {
    t.encoder.block_channels[i] = static_cast<int>(parse_count(widths[i], "block_channels"));
  }
  t.flow = quality_config().flow;
  t.flow.downscale_factor = static_cast<int>(count("train_flow_downscale"));
  t.validate();
  return t;
}

QualityConfig RunConfig::quality_config() const {
  QualityConfig q;
  q.patch.patch_size = count("patch_size");
  q.patch.sharpness_fraction = number("sharpness_fraction");
  q.patch.local_window = count("local_window");
  q.flow.lambda = number("flow_lambda");
  q.flow.theta = number("flow_theta");
  q.flow.tau = number("flow_tau");
  q.flow.pyramid_scale = number("flow_pyramid_scale");
  q.flow.pyramid_levels = static_cast<int>(count("flow_levels"));
  q.flow.warps = static_cast<int>(count("flow_warps"));
  q.flow.inner_iterations = static_cast<int>(count("flow_inner_iterations"));
  q.flow.downscale_factor = static_cast<int>(count("flow_downscale"));
  q.sampling = parse_sampling(get("fps"));
  q.mode = parse_feature_mode(get("feature_mode"));
  q.epsilon_rel = number("epsilon_rel");
  q.threads = count("threads");
  q.validate();
  return q;
}

LinearEvalConfig RunConfig::linear_eval_config() const {
  LinearEvalConfig c;
  c.splits = count("splits");
  c.train_fraction = number("train_fraction");
  c.ridge_lambda = number("ridge_lambda");
  c.seed = seed();
  c.validate();
  return c;
}

SamplingRate parse_sampling(const std::string& s) {
  if (s == "all") return SamplingRate::every_frame();
  const double v = parse_double(s, "fps");
  if (!(v > 0.0)) throw ConfigError("fps must be positive or \"all\"");
  return {v, false};
}

// ---- dataset layout

std::vector<SceneSet> load_scene_tree(const std::string& root) {
  if (!fs::is_directory(root)) throw IngestionError(root + " is not a directory");
  std::vector<fs::path> scene_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) scene_dirs.push_back(e.path());
  }
  std::sort(scene_dirs.begin(), scene_dirs.end());
  std::vector<SceneSet> out;
  for (const auto& d : scene_dirs) {
    SceneSet s;
    s.scene_id = d.filename().string();
    for (const auto& v : sorted_entries(d)) s.versions.push_back(load_video(v.string()));
    if (s.versions.size() < 2) {
      throw IngestionError(d.string() + ": a scene needs at least 2 versions");
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw IngestionError(root + ": no scene directories");
  return out;
}

std::vector<std::pair<std::string, Video>> load_video_dir(const std::string& dir) {
  std::vector<std::pair<std::string, Video>> out;
  for (const auto& p : sorted_entries(dir)) out.emplace_back(video_id(p), load_video(p.string()));
  if (out.empty()) throw IngestionError(dir + ": no videos");
  return out;
}

// ---- entry point

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Blind video quality toolkit", "vision"};
  app.require_subcommand(1);
  app.fallthrough();
  Args a;
  app.add_option("--config", a.config_file, "key=value config file");
  app.add_option("--set", a.overrides, "config override key=value (repeatable)");

  auto* train_cmd = app.add_subcommand("train", "train the four encoders on a scene tree");
  train_cmd->add_option("--data", a.data, "<root>/<scene>/<version>/ tree")->required();
  train_cmd->add_option("--out", a.out, "output weights directory")->required();
  train_cmd->add_option("--trace", a.trace, "loss trace CSV");

  auto* distort_cmd = app.add_subcommand("distort", "write distorted versions of a video");
  distort_cmd->add_option("--video", a.video_list, "source video")->required()->expected(1);
  distort_cmd->add_option("--spec", a.specs, "kind:level[:k=v] (repeatable)")->required();
  distort_cmd->add_option("--out", a.out, "output scene directory")->required();

  auto* corpus_cmd = app.add_subcommand("corpus", "build the pristine MVG corpus");
  corpus_cmd->add_option("--weights", a.weights, "weights directory")->required();
  corpus_cmd->add_option("--videos", a.videos, "directory of pristine videos")->required();
  corpus_cmd->add_option("--out", a.out, "corpus file")->required();

  auto* score_cmd = app.add_subcommand("score", "score videos against a corpus");
  score_cmd->add_option("--weights", a.weights, "weights directory")->required();
  score_cmd->add_option("--corpus", a.corpus, "corpus file")->required();
  score_cmd->add_option("--video", a.video_list, "video (repeatable)");
  score_cmd->add_option("--videos", a.videos, "directory of videos");
  score_cmd->add_option("--fps", a.fps, "sampled pairs per second, or 'all'");
  score_cmd->add_option("--out", a.out, "score CSV (default stdout)");
  score_cmd->add_option("--features-out", a.features_out, "pooled feature CSV");

  auto* eval_cmd = app.add_subcommand("eval", "correlate scores with subjective ratings");
  eval_cmd->add_option("--scores", a.scores, "score CSV")->required();
  eval_cmd->add_option("--mos", a.mos, "CSV with video_id,mos")->required();
  eval_cmd->add_option("--column", a.column, "score column (default VISION)");
  eval_cmd->add_option("--out", a.out, "JSON-lines report (default stdout)");

  auto* lin_cmd = app.add_subcommand("linear-eval", "ridge regression over pooled features");
  lin_cmd->add_option("--features", a.features, "feature CSV")->required();
  lin_cmd->add_option("--mos", a.mos, "CSV with video_id,mos")->required();
  lin_cmd->add_option("--splits", a.splits, "number of random splits");
  lin_cmd->add_option("--seed", a.seed, "split seed");
  lin_cmd->add_option("--ridge", a.ridge, "ridge lambda");

  auto* flow_cmd = app.add_subcommand("flow", "TV-L1 flow between frames t and t+1");
  flow_cmd->add_option("--video", a.video_list, "video")->required()->expected(1);
  flow_cmd->add_option("--index", a.index, "frame index t");
  flow_cmd->add_option("--downscale", a.downscale, "override flow_downscale");
  flow_cmd->add_option("--out", a.out, "flow file")->required();

  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" || args[i] == "--set") {
      ++i;
      continue;
    }
    if (args[i].starts_with("-")) continue;
    if (!app.get_subcommand_no_throw(args[i])) {
      err << "usage error: unknown command \"" << one_line(args[i]) << "\"\n" << app.help();
      return 2;
    }
    break;
  }

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << one_line(e.what()) << "\n" << app.help();
    return 2;
  }

  try {
    if (train_cmd->parsed()) cmd_train(a, out);
    if (distort_cmd->parsed()) cmd_distort(a, out);
    if (corpus_cmd->parsed()) cmd_corpus(a, out, err);
    if (score_cmd->parsed()) cmd_score(a, out);
    if (eval_cmd->parsed()) cmd_eval(a, out);
    if (lin_cmd->parsed()) cmd_linear_eval(a, out);
    if (flow_cmd->parsed()) cmd_flow(a, out);
  } catch (const Error& e) {
    err << "error kind=" << e.kind() << " message=\"" << one_line(e.what()) << "\"\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error kind=internal message=\"" << one_line(e.what()) << "\"\n";
    return 1;
  }
  return 0;
}

}  // namespace vision
