#pragma once

// Little-endian binary helpers shared by the weights, corpus and flow formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vision/errors.hpp"

namespace vision::binio {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw FormatError("cannot open " + path + " for writing");
  }

  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), n); }
  void magic(const char (&m)[5]) { bytes(m, 4); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f32(float v) { bytes(&v, 4); }
  void f64(double v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  void close() {
    out_.flush();
    if (!out_) throw FormatError("write failed for " + path_);
    out_.close();
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == buf_.size(); }
  const std::string& path() const { return path_; }

  void bytes(void* p, std::size_t n, const char* field) {
    if (buf_.size() - pos_ < n) {
      throw FormatError(path_ + ": truncated while reading " + field + " at byte offset " +
                        std::to_string(pos_));
    }
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  void expect_magic(const char (&m)[5]) {
    char got[4];
    bytes(got, 4, "magic");
    if (std::memcmp(got, m, 4) != 0) {
      throw FormatError(path_ + ": bad magic (expected \"" + std::string(m) + "\")");
    }
  }
  std::uint32_t u32(const char* field) {
    std::uint32_t v;
    bytes(&v, 4, field);
    return v;
  }
  std::uint64_t u64(const char* field) {
    std::uint64_t v;
    bytes(&v, 8, field);
    return v;
  }
  float f32(const char* field) {
    float v;
    bytes(&v, 4, field);
    return v;
  }
  double f64(const char* field) {
    double v;
    bytes(&v, 8, field);
    return v;
  }
  std::string str(const char* field, std::size_t max_len = 4096) {
    const std::uint32_t n = u32(field);
    if (n > max_len) {
      throw FormatError(path_ + ": implausible length " + std::to_string(n) + " for " + field);
    }
    std::string s(n, '\0');
    bytes(s.data(), n, field);
    return s;
  }

 private:
  std::string path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace vision::binio
