#pragma once

#include <stdexcept>
#include <string>

namespace vision {

/// Base of every error raised by the toolkit. `kind()` is a stable short tag
/// used by the CLI when printing machine-parseable error lines.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& what) : Error("state", what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error("format", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error("data", what) {}
};

class IngestionError : public Error {
 public:
  explicit IngestionError(const std::string& what) : Error("ingest", what) {}
};

}  // namespace vision
