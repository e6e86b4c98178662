#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vlpd/error.hpp"

namespace vlpd {

using Dims = std::vector<std::size_t>;

inline std::size_t dims_product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ']';
  return os.str();
}

// Row-major dense N-d array. Rank 0 (empty dims) holds a single scalar.
template <typename T>
class Array {
 public:
  using value_type = T;

  Array() : values_(1, T{0}) {}

  explicit Array(Dims dims, T fill = T{0}) : dims_(std::move(dims)) {
    check_dims();
    values_.assign(dims_product(dims_), fill);
  }

  Array(Dims dims, std::vector<T> values) : dims_(std::move(dims)), values_(std::move(values)) {
    check_dims();
    if (values_.size() != dims_product(dims_)) {
      throw ShapeError("array " + dims_to_string(dims_) + " expects " +
                       std::to_string(dims_product(dims_)) + " values, got " +
                       std::to_string(values_.size()));
    }
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const noexcept { return values_.size(); }

  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }
  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  T& operator()(std::size_t i, std::size_t j) { return values_[i * dims_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return values_[i * dims_[1] + j]; }
  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return values_[(i * dims_[1] + j) * dims_[2] + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return values_[(i * dims_[1] + j) * dims_[2] + k];
  }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Array<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    return Array<U>(dims_, std::move(out));
  }

  Array reshaped(Dims dims) const {
    if (dims_product(dims) != size()) {
      throw ShapeError("cannot reshape " + dims_to_string(dims_) + " to " + dims_to_string(dims));
    }
    return Array(std::move(dims), values_);
  }

  bool operator==(const Array& other) const = default;

 private:
  void check_dims() const {
    for (auto d : dims_) {
      if (d == 0) throw ShapeError("array dims must be positive, got " + dims_to_string(dims_));
    }
  }

  Dims dims_;
  std::vector<T> values_;
};

using DenseArray = Array<float>;
using DenseArrayF64 = Array<double>;

template <typename T>
void require_dims(const Array<T>& a, const Dims& expected, const char* what) {
  if (a.dims() != expected) {
    throw ShapeError(std::string(what) + ": expected dims " + dims_to_string(expected) + ", got " +
                     dims_to_string(a.dims()));
  }
}

template <typename T>
void require_rank(const Array<T>& a, std::size_t rank, const char* what) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     dims_to_string(a.dims()));
  }
}

template <typename T>
double max_abs_diff(const Array<T>& a, const Array<T>& b) {
  if (a.dims() != b.dims()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

}  // namespace vlpd
