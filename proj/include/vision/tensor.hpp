#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vision/errors.hpp"

namespace vision {

/// NCHW extents.
struct Shape4 {
  std::size_t n = 1, c = 1, h = 1, w = 1;

  std::size_t count() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

/// Dense 4-D array in NCHW order.
template <typename T>
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape4 shape, T fill = T{}) : shape_(shape), data_(shape.count(), fill) {
    if (shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0) {
      throw ShapeError("tensor dims must be >= 1, got " + shape.str());
    }
  }
  Tensor4(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.count()) {
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <typename U>
  Tensor4<U> cast() const {
    return Tensor4<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

 private:
  Shape4 shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

}  // namespace vision
