// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gslim/error.hpp"

namespace gslim {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor. Activations use NCHW layout.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
      throw ConfigError("tensor data size " + std::to_string(data_.size()) +
                        " does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& vec() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// NCHW element access.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != size())
      throw ConfigError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& o) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <class T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

template <class T>
void require_finite(std::span<const T> v, const char* what) {
  if (!all_finite(v)) throw NumericError(std::string(what) + ": non-finite input element");
}

template <class T>
T max_abs(std::span<const T> v) {
  T m = 0;
  for (T x : v) m = std::max(m, std::abs(x));
  return m;
}

/// Slice of samples [begin, end) along the leading (batch) axis.
template <class T>
Tensor<T> batch_slice(const Tensor<T>& t, std::size_t begin, std::size_t end) {
  Shape s = t.shape();
  const std::size_t per = t.size() / s[0];
  s[0] = end - begin;
  std::vector<T> out(t.data() + begin * per, t.data() + end * per);
  return Tensor<T>(std::move(s), std::move(out));
}

/// Gathers the listed samples along the batch axis.
template <class T>
Tensor<T> batch_gather(const Tensor<T>& t, std::span<const std::size_t> idx) {
  Shape s = t.shape();
  const std::size_t per = t.size() / s[0];
  s[0] = idx.size();
  Tensor<T> out(s);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(t.data() + idx[i] * per, per, out.data() + i * per);
  return out;
}

template <class T, class Rng>
void fill_normal(Tensor<T>& t, Rng& rng, double mean, double stddev) {
  std::normal_distribution<double> d(mean, stddev);
  for (auto& x : t.vec()) x = static_cast<T>(d(rng));
}

template <class T, class Rng>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& x : t.vec()) x = static_cast<T>(d(rng));
}

}  // namespace gslim
