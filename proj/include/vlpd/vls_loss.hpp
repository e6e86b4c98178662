#pragma once

#include <cmath>

#include "vlpd/array.hpp"

namespace vlpd {

// Transition point fixed at 1.
template <typename T>
T smooth_l1(T x) {
  const T a = std::abs(x);
  return a < T{1} ? T{0.5} * x * x : a - T{0.5};
}

template <typename T>
T smooth_l1_grad(T x) {
  if (x >= T{1}) return T{1};
  if (x <= T{-1}) return T{-1};
  return x;
}

// Mean elementwise Smooth-L1 between predicted scores and pseudo labels,
// both [H', W', N]. The target is plain data.
template <typename T>
T vls_loss(const Array<T>& predicted, const Array<T>& target) {
  if (predicted.dims() != target.dims()) {
    throw ShapeError("vls_loss: predicted " + dims_to_string(predicted.dims()) + " vs target " +
                     dims_to_string(target.dims()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    acc += double(smooth_l1(predicted[i] - target[i]));
  }
  return static_cast<T>(acc / double(predicted.size()));
}

// d(vls_loss)/d(predicted).
template <typename T>
Array<T> vls_loss_grad(const Array<T>& predicted, const Array<T>& target) {
  if (predicted.dims() != target.dims()) throw ShapeError("vls_loss_grad: dims mismatch");
  Array<T> g(predicted.dims());
  const T inv = T(1.0 / double(predicted.size()));
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    g[i] = smooth_l1_grad(predicted[i] - target[i]) * inv;
  }
  return g;
}

}  // namespace vlpd
