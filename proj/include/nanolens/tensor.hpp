#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nanolens/error.hpp"

namespace nanolens {

/// Extents of a 4-D tensor in (batch, channel, height, width) order.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t size() const noexcept { return n * c * h * w; }
  constexpr std::size_t plane() const noexcept { return h * w; }
  constexpr std::size_t sample() const noexcept { return c * h * w; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

/// Dense row-major (N,C,H,W) array. Value semantics; copies are deep.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() & noexcept { return data_; }
  std::span<const T> data() const& noexcept { return data_; }
  std::span<const T> data() && = delete;  // would dangle
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[offset(n, c, y, x)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[offset(n, c, y, x)];
  }

  /// Contiguous H*W plane of channel c in sample n.
  std::span<T> plane(std::size_t n, std::size_t c) noexcept {
    return std::span<T>(data_).subspan(offset(n, c, 0, 0), shape_.plane());
  }
  std::span<const T> plane(std::size_t n, std::size_t c) const noexcept {
    return std::span<const T>(data_).subspan(offset(n, c, 0, 0), shape_.plane());
  }

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape.size() != shape_.size()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor(shape, data_);
  }

  /// Copies sample n into a tensor of batch size 1.
  Tensor sample(std::size_t n) const {
    Shape s = shape_;
    s.n = 1;
    auto first = data_.begin() + static_cast<std::ptrdiff_t>(n * shape_.sample());
    return Tensor(s, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(s.size())));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Stacks equally shaped single-sample tensors along the batch dimension.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>* const> samples) {
  if (samples.empty()) throw ShapeError("cannot stack an empty batch");
  Shape s = samples.front()->shape();
  s.n = 0;
  for (const auto* t : samples) {
    Shape u = t->shape();
    if (u.c != s.c || u.h != s.h || u.w != s.w) {
      throw ShapeError("cannot stack " + u.str() + " with " + samples.front()->shape().str());
    }
    s.n += u.n;
  }
  std::vector<T> data;
  data.reserve(s.size());
  for (const auto* t : samples) data.insert(data.end(), t->values().begin(), t->values().end());
  return Tensor<T>(s, std::move(data));
}

template <typename T>
T sum(const Tensor<T>& t) {
  T acc = 0;
  for (T v : t.data()) acc += v;
  return acc;
}

template <typename T>
T mean(const Tensor<T>& t) {
  return t.empty() ? T(0) : sum(t) / static_cast<T>(t.size());
}

}  // namespace nanolens
