#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nanolens/error.hpp"
#include "nanolens/tensor.hpp"

namespace nanolens {

enum class LayerKind : std::uint32_t {
  kConv2D = 0,
  kMaxPool2x2 = 1,
  kUpsampleNearest2x = 2,
  kFlatten = 3,
  kDense = 4,
};

enum class Activation : std::uint32_t { kLinear = 0, kRelu = 1, kSigmoid = 2 };

inline std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2D: return "Conv2D";
    case LayerKind::kMaxPool2x2: return "MaxPool2x2";
    case LayerKind::kUpsampleNearest2x: return "UpsampleNearest2x";
    case LayerKind::kFlatten: return "Flatten";
    case LayerKind::kDense: return "Dense";
  }
  return "Unknown";
}

inline std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::kLinear: return "linear";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "unknown";
}

/// One layer of a linear-chain network together with its parameters.
///
/// Conv2D weights are (out_channels, in_channels, k, k) and are applied as a
/// stride-1, zero-padded "same" cross-correlation (no kernel flip). Dense
/// weights are (units, in_features, 1, 1) and expect a flattened
/// (N, F, 1, 1) input.
template <typename T>
struct LayerSpec {
  LayerKind kind = LayerKind::kConv2D;
  std::size_t units = 0;  // out_channels for Conv2D, units for Dense
  std::size_t kernel_size = 3;
  Activation activation = Activation::kLinear;
  Tensor<T> weight;
  std::vector<T> bias;

  bool has_params() const noexcept {
    return kind == LayerKind::kConv2D || kind == LayerKind::kDense;
  }
  std::size_t param_count() const noexcept { return weight.size() + bias.size(); }

  static LayerSpec conv(std::size_t in_channels, std::size_t out_channels, Activation act,
                        std::size_t kernel = 3) {
    if (kernel % 2 == 0 || kernel == 0) throw ConfigError("Conv2D kernel size must be odd");
    if (out_channels == 0 || in_channels == 0) throw ConfigError("Conv2D channels must be positive");
    LayerSpec l;
    l.kind = LayerKind::kConv2D;
    l.units = out_channels;
    l.kernel_size = kernel;
    l.activation = act;
    l.weight = Tensor<T>(Shape{out_channels, in_channels, kernel, kernel});
    l.bias.assign(out_channels, T(0));
    return l;
  }
  static LayerSpec dense(std::size_t in_features, std::size_t units, Activation act) {
    if (units == 0 || in_features == 0) throw ConfigError("Dense sizes must be positive");
    LayerSpec l;
    l.kind = LayerKind::kDense;
    l.units = units;
    l.kernel_size = 1;
    l.activation = act;
    l.weight = Tensor<T>(Shape{units, in_features, 1, 1});
    l.bias.assign(units, T(0));
    return l;
  }
  static LayerSpec pool() { return parameterless(LayerKind::kMaxPool2x2); }
  static LayerSpec upsample() { return parameterless(LayerKind::kUpsampleNearest2x); }
  static LayerSpec flatten() { return parameterless(LayerKind::kFlatten); }

  template <typename U>
  LayerSpec<U> cast() const {
    LayerSpec<U> l;
    l.kind = kind;
    l.units = units;
    l.kernel_size = kernel_size;
    l.activation = activation;
    l.weight = weight.template cast<U>();
    l.bias.assign(bias.begin(), bias.end());
    return l;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;

 private:
  static LayerSpec parameterless(LayerKind kind) {
    LayerSpec l;
    l.kind = kind;
    l.kernel_size = 0;
    return l;
  }
};

/// Record of one forward call; enough to run backward without recomputation.
template <typename T>
struct ForwardCache {
  LayerKind kind = LayerKind::kConv2D;
  Tensor<T> input;
  Tensor<T> output;                   // post-activation
  std::vector<std::uint32_t> argmax;  // MaxPool2x2: flat input offset per output element
};

template <typename T>
struct GradResult {
  Tensor<T> grad_input;
  Tensor<T> grad_weight;  // empty for parameterless layers
  std::vector<T> grad_bias;
};

template <typename T>
struct ForwardResult {
  Tensor<T> output;
  ForwardCache<T> cache;
};

namespace detail {

inline std::string layer_label(std::size_t index, LayerKind kind) {
  return "layer " + std::to_string(index) + " (" + std::string(to_string(kind)) + ")";
}

template <typename T>
T sigmoid(T v) {
  // Split on sign so exp never overflows.
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
void activate(std::span<T> values, Activation act) {
  switch (act) {
    case Activation::kLinear: break;
    case Activation::kRelu:
      for (T& v : values) v = v > T(0) ? v : T(0);
      break;
    case Activation::kSigmoid:
      for (T& v : values) v = sigmoid(v);
      break;
  }
}

/// Gradient w.r.t. pre-activation, given post-activation outputs.
template <typename T>
Tensor<T> activation_backward(const Tensor<T>& output, const Tensor<T>& grad_output,
                              Activation act) {
  Tensor<T> g = grad_output;
  auto gd = g.data();
  auto od = output.data();
  switch (act) {
    case Activation::kLinear: break;
    case Activation::kRelu:
      // post-activation > 0 iff pre-activation > 0; the boundary passes nothing
      for (std::size_t i = 0; i < gd.size(); ++i) gd[i] = od[i] > T(0) ? gd[i] : T(0);
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < gd.size(); ++i) gd[i] *= od[i] * (T(1) - od[i]);
      break;
  }
  return g;
}

// out[y][x] += w * in[y+dy][x+dx] over the overlap of both planes (zero padding elsewhere).
template <typename T>
void accumulate_shifted(T* out, const T* in, std::size_t h, std::size_t w, std::ptrdiff_t dy,
                        std::ptrdiff_t dx, T weight) {
  const auto H = static_cast<std::ptrdiff_t>(h);
  const auto W = static_cast<std::ptrdiff_t>(w);
  const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
  const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(H, H - dy);
  const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
  const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W - dx);
  for (std::ptrdiff_t y = y0; y < y1; ++y) {
    T* o = out + y * W;
    const T* i = in + (y + dy) * W + dx;
    for (std::ptrdiff_t x = x0; x < x1; ++x) o[x] += weight * i[x];
  }
}

// sum over the overlap of a[y][x] * b[y+dy][x+dx]
template <typename T>
T shifted_dot(const T* a, const T* b, std::size_t h, std::size_t w, std::ptrdiff_t dy,
              std::ptrdiff_t dx) {
  const auto H = static_cast<std::ptrdiff_t>(h);
  const auto W = static_cast<std::ptrdiff_t>(w);
  const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
  const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(H, H - dy);
  const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
  const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W - dx);
  T acc = 0;
  for (std::ptrdiff_t y = y0; y < y1; ++y) {
    const T* pa = a + y * W;
    const T* pb = b + (y + dy) * W + dx;
    for (std::ptrdiff_t x = x0; x < x1; ++x) acc += pa[x] * pb[x];
  }
  return acc;
}

template <typename T>
Tensor<T> conv_linear(const LayerSpec<T>& layer, const Tensor<T>& input) {
  const Shape in = input.shape();
  const std::size_t oc_count = layer.units;
  const std::size_t k = layer.kernel_size;
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  Tensor<T> out(Shape{in.n, oc_count, in.h, in.w});
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t oc = 0; oc < oc_count; ++oc) {
      auto plane = out.plane(n, oc);
      std::fill(plane.begin(), plane.end(), layer.bias[oc]);
      for (std::size_t ic = 0; ic < in.c; ++ic) {
        const T* src = input.plane(n, ic).data();
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const T wv = layer.weight.at(oc, ic, ky, kx);
            if (wv == T(0)) continue;
            accumulate_shifted(plane.data(), src, in.h, in.w,
                               static_cast<std::ptrdiff_t>(ky) - pad,
                               static_cast<std::ptrdiff_t>(kx) - pad, wv);
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> dense_linear(const LayerSpec<T>& layer, const Tensor<T>& input) {
  const Shape in = input.shape();
  const std::size_t units = layer.units;
  const std::size_t features = in.c;
  Tensor<T> out(Shape{in.n, units, 1, 1});
  for (std::size_t n = 0; n < in.n; ++n) {
    const T* x = input.data().data() + n * features;
    for (std::size_t u = 0; u < units; ++u) {
      const T* wrow = layer.weight.data().data() + u * features;
      T acc = 0;
      for (std::size_t f = 0; f < features; ++f) acc += wrow[f] * x[f];
      out.at(n, u, 0, 0) = acc + layer.bias[u];
    }
  }
  return out;
}

template <typename T>
void check_params(const LayerSpec<T>& layer, std::size_t index) {
  const Shape ws = layer.weight.shape();
  if (ws.n != layer.units || layer.bias.size() != layer.units ||
      (layer.kind == LayerKind::kConv2D &&
       (ws.h != layer.kernel_size || ws.w != layer.kernel_size))) {
    throw ShapeError(layer_label(index, layer.kind) + ": inconsistent parameters, weight " +
                     ws.str() + ", bias " + std::to_string(layer.bias.size()));
  }
}

}  // namespace detail

/// Output shape of `layer` for an input of shape `in`; throws ShapeError on incompatibility.
template <typename T>
Shape output_shape(const LayerSpec<T>& layer, const Shape& in, std::size_t index = 0) {
  const auto label = detail::layer_label(index, layer.kind);
  switch (layer.kind) {
    case LayerKind::kConv2D: {
      detail::check_params(layer, index);
      const std::size_t expected = layer.weight.shape().c;
      if (in.c != expected) {
        throw ShapeError(label + ": expected input (N," + std::to_string(expected) + ",H,W), got " +
                         in.str());
      }
      return Shape{in.n, layer.units, in.h, in.w};
    }
    case LayerKind::kMaxPool2x2:
      if (in.h % 2 != 0 || in.w % 2 != 0 || in.h == 0 || in.w == 0) {
        throw ShapeError(label + ": expected even, non-zero spatial dims, got " + in.str());
      }
      return Shape{in.n, in.c, in.h / 2, in.w / 2};
    case LayerKind::kUpsampleNearest2x: return Shape{in.n, in.c, in.h * 2, in.w * 2};
    case LayerKind::kFlatten: return Shape{in.n, in.c * in.h * in.w, 1, 1};
    case LayerKind::kDense: {
      detail::check_params(layer, index);
      const std::size_t expected = layer.weight.shape().c;
      if (in.h != 1 || in.w != 1 || in.c != expected) {
        throw ShapeError(label + ": expected input (N," + std::to_string(expected) + ",1,1), got " +
                         in.str());
      }
      return Shape{in.n, layer.units, 1, 1};
    }
  }
  throw ShapeError(label + ": unknown layer kind");
}

/// Pre-activation output of a Conv2D or Dense layer (identity for other kinds' activations).
template <typename T>
Tensor<T> forward_linear(const LayerSpec<T>& layer, const Tensor<T>& input, std::size_t index = 0) {
  output_shape(layer, input.shape(), index);
  if (layer.kind == LayerKind::kConv2D) return detail::conv_linear(layer, input);
  if (layer.kind == LayerKind::kDense) return detail::dense_linear(layer, input);
  throw ShapeError(detail::layer_label(index, layer.kind) + " has no linear part");
}

template <typename T>
ForwardResult<T> forward(const LayerSpec<T>& layer, const Tensor<T>& input, std::size_t index = 0) {
  const Shape out_shape = output_shape(layer, input.shape(), index);
  ForwardResult<T> r;
  r.cache.kind = layer.kind;
  r.cache.input = input;
  const Shape in = input.shape();
  switch (layer.kind) {
    case LayerKind::kConv2D:
    case LayerKind::kDense:
      r.output = layer.kind == LayerKind::kConv2D ? detail::conv_linear(layer, input)
                                                  : detail::dense_linear(layer, input);
      detail::activate(r.output.data(), layer.activation);
      break;
    case LayerKind::kMaxPool2x2: {
      r.output = Tensor<T>(out_shape);
      r.cache.argmax.resize(out_shape.size());
      std::size_t o = 0;
      for (std::size_t n = 0; n < in.n; ++n) {
        for (std::size_t c = 0; c < in.c; ++c) {
          for (std::size_t y = 0; y < out_shape.h; ++y) {
            for (std::size_t x = 0; x < out_shape.w; ++x, ++o) {
              // row-major window scan; strict > keeps the first maximum
              std::size_t best = input.offset(n, c, 2 * y, 2 * x);
              for (std::size_t dy = 0; dy < 2; ++dy) {
                for (std::size_t dx = 0; dx < 2; ++dx) {
                  const std::size_t at = input.offset(n, c, 2 * y + dy, 2 * x + dx);
                  if (input[at] > input[best]) best = at;
                }
              }
              r.output[o] = input[best];
              r.cache.argmax[o] = static_cast<std::uint32_t>(best);
            }
          }
        }
      }
      break;
    }
    case LayerKind::kUpsampleNearest2x: {
      r.output = Tensor<T>(out_shape);
      for (std::size_t n = 0; n < in.n; ++n)
        for (std::size_t c = 0; c < in.c; ++c)
          for (std::size_t y = 0; y < out_shape.h; ++y)
            for (std::size_t x = 0; x < out_shape.w; ++x)
              r.output.at(n, c, y, x) = input.at(n, c, y / 2, x / 2);
      break;
    }
    case LayerKind::kFlatten: r.output = input.reshaped(out_shape); break;
  }
  r.cache.output = r.output;
  return r;
}

template <typename T>
GradResult<T> backward(const LayerSpec<T>& layer, const ForwardCache<T>& cache,
                       const Tensor<T>& grad_output, std::size_t index = 0) {
  const auto label = detail::layer_label(index, layer.kind);
  if (cache.kind != layer.kind) {
    throw ShapeError(label + ": forward cache was recorded for " +
                     std::string(to_string(cache.kind)));
  }
  const Shape out_shape = output_shape(layer, cache.input.shape(), index);
  if (cache.output.shape() != out_shape) {
    throw ShapeError(label + ": forward cache output " + cache.output.shape().str() +
                     " does not match layer output " + out_shape.str());
  }
  if (grad_output.shape() != out_shape) {
    throw ShapeError(label + ": expected grad_output " + out_shape.str() + ", got " +
                     grad_output.shape().str());
  }
  const Shape in = cache.input.shape();
  GradResult<T> g;
  g.grad_input = Tensor<T>(in);
  switch (layer.kind) {
    case LayerKind::kConv2D: {
      const Tensor<T> gpre = detail::activation_backward(cache.output, grad_output, layer.activation);
      const std::size_t k = layer.kernel_size;
      const auto pad = static_cast<std::ptrdiff_t>(k / 2);
      g.grad_weight = Tensor<T>(layer.weight.shape());
      g.grad_bias.assign(layer.units, T(0));
      for (std::size_t n = 0; n < in.n; ++n) {
        for (std::size_t oc = 0; oc < layer.units; ++oc) {
          const T* go = gpre.plane(n, oc).data();
          T bsum = 0;
          for (std::size_t i = 0; i < out_shape.plane(); ++i) bsum += go[i];
          g.grad_bias[oc] += bsum;
          for (std::size_t ic = 0; ic < in.c; ++ic) {
            const T* src = cache.input.plane(n, ic).data();
            T* gi = g.grad_input.plane(n, ic).data();
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const auto dy = static_cast<std::ptrdiff_t>(ky) - pad;
                const auto dx = static_cast<std::ptrdiff_t>(kx) - pad;
                g.grad_weight.at(oc, ic, ky, kx) += detail::shifted_dot(go, src, in.h, in.w, dy, dx);
                // input pixel p receives go[p - d] * w
                detail::accumulate_shifted(gi, go, in.h, in.w, -dy, -dx,
                                           layer.weight.at(oc, ic, ky, kx));
              }
            }
          }
        }
      }
      break;
    }
    case LayerKind::kDense: {
      const Tensor<T> gpre = detail::activation_backward(cache.output, grad_output, layer.activation);
      const std::size_t features = in.c;
      g.grad_weight = Tensor<T>(layer.weight.shape());
      g.grad_bias.assign(layer.units, T(0));
      for (std::size_t n = 0; n < in.n; ++n) {
        const T* x = cache.input.data().data() + n * features;
        T* gx = g.grad_input.data().data() + n * features;
        for (std::size_t u = 0; u < layer.units; ++u) {
          const T gu = gpre.at(n, u, 0, 0);
          g.grad_bias[u] += gu;
          if (gu == T(0)) continue;
          const T* wrow = layer.weight.data().data() + u * features;
          T* gw = g.grad_weight.data().data() + u * features;
          for (std::size_t f = 0; f < features; ++f) {
            gw[f] += gu * x[f];
            gx[f] += gu * wrow[f];
          }
        }
      }
      break;
    }
    case LayerKind::kMaxPool2x2:
      if (cache.argmax.size() != out_shape.size()) {
        throw ShapeError(label + ": forward cache lacks pooling indices");
      }
      for (std::size_t o = 0; o < out_shape.size(); ++o) {
        g.grad_input[cache.argmax[o]] += grad_output[o];
      }
      break;
    case LayerKind::kUpsampleNearest2x:
      for (std::size_t n = 0; n < in.n; ++n)
        for (std::size_t c = 0; c < in.c; ++c)
          for (std::size_t y = 0; y < out_shape.h; ++y)
            for (std::size_t x = 0; x < out_shape.w; ++x)
              g.grad_input.at(n, c, y / 2, x / 2) += grad_output.at(n, c, y, x);
      break;
    case LayerKind::kFlatten: g.grad_input = grad_output.reshaped(in); break;
  }
  return g;
}

}  // namespace nanolens
