#pragma once

// Finite-difference checks shared by the unit suite and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "nanolens/finite_difference.hpp"
#include "nanolens/layer.hpp"
#include "nanolens/loss.hpp"
#include "test_support.hpp"

namespace nanolens::test {

inline constexpr double kFdEps = 1e-5;
inline constexpr double kFdTolerance = 1e-6;

struct GradCheckOutcome {
  std::string name;
  double input_error = 0;
  double param_error = 0;
  bool skipped = false;  // sample landed too close to a kink

  double worst() const { return std::max(input_error, param_error); }
};

namespace detail {

/// Smallest |pre-activation| of a Conv2D/Dense layer on `x`.
inline double kink_margin(const LayerSpec<double>& layer, const Tensor<double>& x) {
  if (layer.activation != Activation::kRelu) return 1.0;
  const Tensor<double> pre = forward_linear(layer, x);
  double margin = 1.0;
  for (double v : pre.data()) margin = std::min(margin, std::abs(v));
  return margin;
}

inline double weighted_sum(const Tensor<double>& a, const Tensor<double>& r) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * r[i];
  return acc;
}

}  // namespace detail

/// Checks backward() of `layer` against central differences of f(x) = <forward(x), r>.
inline GradCheckOutcome check_layer(const std::string& name, LayerSpec<double> layer,
                                    const Tensor<double>& x, std::mt19937_64& rng) {
  GradCheckOutcome out;
  out.name = name;
  if (layer.has_params() && detail::kink_margin(layer, x) < 1e-3) {
    out.skipped = true;
    return out;
  }
  const auto fwd = forward(layer, x);
  const Tensor<double> r = random_tensor<double>(fwd.output.shape(), rng);
  const auto grads = backward(layer, fwd.cache, r);

  std::function<double(const Tensor<double>&)> f_input = [&](const Tensor<double>& probe) {
    return detail::weighted_sum(forward(layer, probe).output, r);
  };
  out.input_error = max_relative_error(grads.grad_input,
                                       finite_difference_gradient(f_input, x, kFdEps));
  if (layer.has_params()) {
    std::function<double(const Tensor<double>&)> f_weight = [&](const Tensor<double>& w) {
      LayerSpec<double> probe = layer;
      probe.weight = w;
      return detail::weighted_sum(forward(probe, x).output, r);
    };
    const Tensor<double> bias(Shape{1, 1, 1, layer.bias.size()}, layer.bias);
    std::function<double(const Tensor<double>&)> f_bias = [&](const Tensor<double>& b) {
      LayerSpec<double> probe = layer;
      probe.bias = b.values();
      return detail::weighted_sum(forward(probe, x).output, r);
    };
    const Tensor<double> analytic_bias(bias.shape(), grads.grad_bias);
    out.param_error = std::max(
        max_relative_error(grads.grad_weight, finite_difference_gradient(f_weight, layer.weight, kFdEps)),
        max_relative_error(analytic_bias, finite_difference_gradient(f_bias, bias, kFdEps)));
  }
  return out;
}

/// One randomized sweep over every layer kind and both losses. Dimensions stay <= 8.
inline std::vector<GradCheckOutcome> gradient_sweep(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> batch(1, 3), chans(1, 4), half(1, 4), feats(1, 8);
  std::vector<GradCheckOutcome> results;
  const Activation acts[] = {Activation::kLinear, Activation::kRelu, Activation::kSigmoid};
  const auto act = acts[seed % 3];
  const std::string act_name(to_string(act));

  // ReLU samples that land within 1e-3 of the kink are redrawn.
  for (int attempt = 0; attempt < 100; ++attempt) {
    const std::size_t k = std::size_t{1} + 2 * (seed % 3);  // 1, 3, 5
    Shape s{batch(rng), chans(rng), 2 * half(rng), 2 * half(rng)};
    auto layer = LayerSpec<double>::conv(s.c, chans(rng), act, k);
    layer.weight = random_tensor<double>(layer.weight.shape(), rng);
    for (double& b : layer.bias) b = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    auto o = check_layer("Conv2D/" + act_name + "/k" + std::to_string(k), layer,
                         random_tensor<double>(s, rng), rng);
    if (o.skipped) continue;
    results.push_back(o);
    break;
  }
  {
    Shape s{batch(rng), chans(rng), 2 * half(rng), 2 * half(rng)};
    results.push_back(check_layer("MaxPool2x2", LayerSpec<double>::pool(),
                                  distinct_tensor<double>(s, rng), rng));
  }
  {
    Shape s{batch(rng), chans(rng), half(rng), half(rng)};
    results.push_back(check_layer("UpsampleNearest2x", LayerSpec<double>::upsample(),
                                  random_tensor<double>(s, rng), rng));
  }
  {
    Shape s{batch(rng), chans(rng), half(rng), half(rng)};
    results.push_back(
        check_layer("Flatten", LayerSpec<double>::flatten(), random_tensor<double>(s, rng), rng));
  }
  for (int attempt = 0; attempt < 100; ++attempt) {
    Shape s{batch(rng), feats(rng), 1, 1};
    auto layer = LayerSpec<double>::dense(s.c, feats(rng), act);
    layer.weight = random_tensor<double>(layer.weight.shape(), rng);
    for (double& b : layer.bias) b = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    auto o = check_layer("Dense/" + act_name, layer, random_tensor<double>(s, rng), rng);
    if (o.skipped) continue;
    results.push_back(o);
    break;
  }
  {
    Shape s{batch(rng), chans(rng), half(rng), half(rng)};
    const Tensor<double> pred = random_tensor<double>(s, rng);
    const Tensor<double> target = random_tensor<double>(s, rng);
    std::function<double(const Tensor<double>&)> f = [&](const Tensor<double>& p) {
      return mse_loss(p, target).loss;
    };
    GradCheckOutcome o;
    o.name = "mse_loss";
    o.input_error = max_relative_error(mse_loss(pred, target).grad,
                                       finite_difference_gradient(f, pred, kFdEps));
    results.push_back(o);
  }
  {
    const std::size_t n = batch(rng);
    const std::size_t classes = std::uniform_int_distribution<std::size_t>(2, 8)(rng);
    const Tensor<double> logits = random_tensor<double>(Shape{n, classes, 1, 1}, rng, -3.0, 3.0);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = std::uniform_int_distribution<std::size_t>(0, classes - 1)(rng);
    std::function<double(const Tensor<double>&)> f = [&](const Tensor<double>& z) {
      return softmax_cross_entropy(z, labels).loss;
    };
    GradCheckOutcome o;
    o.name = "softmax_cross_entropy";
    o.input_error = max_relative_error(softmax_cross_entropy(logits, labels).grad,
                                       finite_difference_gradient(f, logits, kFdEps));
    results.push_back(o);
  }
  return results;
}

}  // namespace nanolens::test
