#include "vision/video.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace vision {

namespace {

std::map<std::string, std::string> read_key_values(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IngestionError("cannot open metadata file " + p.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IngestionError(p.string() + ": malformed line '" + line + "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

double parse_number(const std::map<std::string, std::string>& kv, const std::string& key,
                    const fs::path& where) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw IngestionError(where.string() + ": missing '" + key + "'");
  double v = 0.0;
  const auto& s = it->second;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !(v > 0.0) || !std::isfinite(v)) {
    throw IngestionError(where.string() + ": bad value for '" + key + "': " + s);
  }
  return v;
}

Plane decode_gray_or_rgb(const unsigned char* px, std::size_t w, std::size_t h, int channels) {
  Plane p(w, h);
  for (std::size_t i = 0; i < w * h; ++i) {
    if (channels == 1) {
      p.data[i] = px[i] / 255.0f;
    } else {
      const unsigned char* c = px + 3 * i;
      p.data[i] = static_cast<float>((0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]) / 255.0);
    }
  }
  return p;
}

// Reads one whitespace-separated header token, skipping '#' comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

Plane read_pnm(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + p.string());
  const std::string magic = pnm_token(in);
  int channels;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw IngestionError(p.string() + ": not a binary PGM/PPM (magic '" + magic + "' at byte 0)");
  }
  auto header_field = [&](const char* name) -> std::size_t {
    const auto at = static_cast<long long>(in.tellg());
    const std::string tok = pnm_token(in);
    std::size_t v = 0;
    const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || r.ec != std::errc() || r.ptr != tok.data() + tok.size()) {
      throw IngestionError(p.string() + ": malformed PNM header " + name + " '" + tok +
                           "' near byte " + std::to_string(std::max(at, 0LL)));
    }
    return v;
  };
  const std::size_t w = header_field("width");
  const std::size_t h = header_field("height");
  const std::size_t maxval = header_field("maxval");
  if (w == 0 || h == 0) throw IngestionError(p.string() + ": zero image dimension");
  if (maxval != 255) throw IngestionError(p.string() + ": only maxval 255 is supported");
  std::vector<unsigned char> buf(w * h * channels);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw IngestionError(p.string() + ": truncated pixel data");
  }
  return decode_gray_or_rgb(buf.data(), w, h, channels);
}

unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

std::string format_fps(double fps) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, fps);
  return std::string(buf, r.ptr);
}

Video load_pnm_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) files.push_back(e.path());
  }
  if (files.empty()) throw IngestionError(dir.string() + ": no .pgm/.ppm frames found");
  std::sort(files.begin(), files.end());
  const double fps = parse_number(read_key_values(dir / "meta.txt"), "fps", dir / "meta.txt");
  std::vector<Plane> planes;
  for (const auto& f : files) planes.push_back(read_pnm(f));
  for (std::size_t i = 1; i < planes.size(); ++i) {
    if (!planes[i].same_dims(planes.front())) {
      throw IngestionError(files[i].string() + ": frame " + std::to_string(i) + " is " +
                           std::to_string(planes[i].width) + "x" + std::to_string(planes[i].height) +
                           ", expected " + std::to_string(planes[0].width) + "x" +
                           std::to_string(planes[0].height));
    }
  }
  return make_video(std::move(planes), fps);
}

Video load_raw(const fs::path& path) {
  const fs::path side = path.string() + ".txt";
  const auto kv = read_key_values(side);
  const auto w = static_cast<std::size_t>(parse_number(kv, "width", side));
  const auto h = static_cast<std::size_t>(parse_number(kv, "height", side));
  const double fps = parse_number(kv, "fps", side);
  int channels = 1;
  if (kv.count("channels")) channels = static_cast<int>(parse_number(kv, "channels", side));
  if (channels != 1 && channels != 3) throw IngestionError(side.string() + ": channels must be 1 or 3");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t frame_bytes = w * h * static_cast<std::size_t>(channels);
  if (buf.empty() || buf.size() % frame_bytes != 0) {
    throw IngestionError(path.string() + ": size " + std::to_string(buf.size()) +
                         " is not a whole number of " + std::to_string(w) + "x" +
                         std::to_string(h) + " frames");
  }
  std::vector<Plane> planes;
  for (std::size_t off = 0; off < buf.size(); off += frame_bytes) {
    planes.push_back(decode_gray_or_rgb(buf.data() + off, w, h, channels));
  }
  return make_video(std::move(planes), fps);
}

}  // namespace

void Video::validate() const {
  if (frames.empty()) throw ShapeError("video has no frames");
  if (!(fps > 0.0)) throw ShapeError("video fps must be positive");
  for (const auto& f : frames) {
    if (!f.luma.same_dims(frames.front().luma)) throw ShapeError("video frames differ in size");
  }
}

Video make_video(std::vector<Plane> planes, double fps) {
  Video v;
  v.fps = fps;
  v.frames.reserve(planes.size());
  for (std::size_t i = 0; i < planes.size(); ++i) {
    v.frames.push_back(make_frame(std::move(planes[i]), static_cast<std::int64_t>(i)));
  }
  v.validate();
  return v;
}

bool is_raw_video_path(const std::string& path) {
  return fs::path(path).extension() == ".raw";
}

Video load_video(const std::string& path) {
  const fs::path p(path);
  if (!fs::exists(p)) throw IngestionError("video not found: " + path);
  try {
    return fs::is_directory(p) ? load_pnm_dir(p) : load_raw(p);
  } catch (const ShapeError& e) {
    throw IngestionError(path + ": " + e.what());
  }
}

void save_video(const Video& video, const std::string& path) {
  video.validate();
  const fs::path p(path);
  const std::size_t w = video.width(), h = video.height();
  if (is_raw_video_path(path)) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IngestionError("cannot write " + path);
    std::vector<unsigned char> buf(w * h);
    for (const auto& f : video.frames) {
      std::transform(f.luma.data.begin(), f.luma.data.end(), buf.begin(), to_byte);
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
    std::ofstream side(path + ".txt");
    side << "width=" << w << "\nheight=" << h << "\nfps=" << format_fps(video.fps) << "\n";
    if (!out || !side) throw IngestionError("write failed for " + path);
    return;
  }
  fs::create_directories(p);
  for (const auto& e : fs::directory_iterator(p)) {
    const auto ext = e.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm") fs::remove(e.path());
  }
  char name[32];
  std::vector<unsigned char> buf(w * h);
  for (std::size_t i = 0; i < video.size(); ++i) {
    std::snprintf(name, sizeof name, "frame_%06zu.pgm", i);
    std::ofstream out(p / name, std::ios::binary);
    out << "P5\n" << w << " " << h << "\n255\n";
    std::transform(video.frames[i].luma.data.begin(), video.frames[i].luma.data.end(), buf.begin(),
                   to_byte);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IngestionError("write failed for " + (p / name).string());
  }
  std::ofstream meta(p / "meta.txt");
  meta << "fps=" << format_fps(video.fps) << "\n";
}

}  // namespace vision
