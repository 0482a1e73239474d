#pragma once

#include <charconv>
#include <string>

namespace vision {

/// Shortest round-trip decimal form, independent of locale.
inline std::string to_text(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace vision
