#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "nanolens/error.hpp"
#include "nanolens/tensor.hpp"

namespace nanolens {

/// Central-difference gradient of a scalar function, one coordinate at a time.
///
/// Intended as a test oracle; run it in double precision.
template <typename T>
Tensor<T> finite_difference_gradient(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x,
                                     T eps) {
  Tensor<T> probe = x;
  Tensor<T> grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T original = probe[i];
    probe[i] = original + eps;
    const T up = f(probe);
    probe[i] = original - eps;
    const T down = f(probe);
    probe[i] = original;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error("finite_difference_gradient: non-finite function value at coordinate " +
                  std::to_string(i));
    }
    grad[i] = (up - down) / (T(2) * eps);
  }
  return grad;
}

/// max_i |a_i - b_i| / max(1, |a_i|, |b_i|)
template <typename T>
T max_relative_error(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_relative_error: shape mismatch");
  T worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T scale = std::max({T(1), std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace nanolens
