#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "nanolens/error.hpp"
#include "nanolens/tensor.hpp"

namespace nanolens {

template <typename T>
struct LossResult {
  T loss = 0;
  Tensor<T> grad;
};

/// Pixel-wise mean squared error and its gradient w.r.t. `pred`.
template <typename T>
LossResult<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: prediction " + pred.shape().str() + " vs target " +
                     target.shape().str());
  }
  LossResult<T> r;
  r.grad = Tensor<T>(pred.shape());
  const auto count = static_cast<T>(pred.size());
  T acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred[i] - target[i];
    acc += d * d;
    r.grad[i] = T(2) * d / count;
  }
  r.loss = pred.empty() ? T(0) : acc / count;
  return r;
}

/// Row-wise softmax of (N, K, 1, 1) logits.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  const Shape s = logits.shape();
  Tensor<T> p(s);
  const std::size_t k = s.sample();
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* row = logits.data().data() + n * k;
    T* out = p.data().data() + n * k;
    const T mx = *std::max_element(row, row + k);
    T z = 0;
    for (std::size_t j = 0; j < k; ++j) z += (out[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) out[j] /= z;
  }
  return p;
}

/// Mean negative log-likelihood of the true classes; grad = (softmax - onehot) / N.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  const Shape s = logits.shape();
  if (s.h != 1 || s.w != 1 || s.n != labels.size()) {
    throw ShapeError("softmax_cross_entropy: expected (" + std::to_string(labels.size()) +
                     ",K,1,1) logits, got " + s.str());
  }
  const std::size_t k = s.c;
  LossResult<T> r;
  r.grad = Tensor<T>(s);
  T acc = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    if (labels[n] >= k) {
      throw RangeError("softmax_cross_entropy: label " + std::to_string(labels[n]) +
                       " out of range [0, " + std::to_string(k) + ")");
    }
    const T* row = logits.data().data() + n * k;
    T* g = r.grad.data().data() + n * k;
    const T mx = *std::max_element(row, row + k);
    T z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const T log_z = std::log(z) + mx;
    acc += log_z - row[labels[n]];
    const auto batch = static_cast<T>(s.n);
    for (std::size_t j = 0; j < k; ++j) {
      const T prob = std::exp(row[j] - log_z);
      g[j] = (prob - (j == labels[n] ? T(1) : T(0))) / batch;
    }
  }
  r.loss = s.n == 0 ? T(0) : acc / static_cast<T>(s.n);
  return r;
}

}  // namespace nanolens
