#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nanolens/error.hpp"
#include "nanolens/layer.hpp"
#include "nanolens/optimizer.hpp"
#include "nanolens/tensor.hpp"

namespace nanolens {

enum class ModelKind : std::uint32_t { kAutoencoder = 0, kClassifier = 1 };

inline std::string_view to_string(ModelKind kind) {
  return kind == ModelKind::kAutoencoder ? "autoencoder" : "classifier";
}

/// Per-sample input extents (channels, height, width).
struct InputShape {
  std::size_t c = 1;
  std::size_t h = 0;
  std::size_t w = 0;

  Shape batch(std::size_t n) const { return Shape{n, c, h, w}; }
  friend bool operator==(const InputShape&, const InputShape&) = default;
};

/// A linear chain of layers plus the markers used by truncation and transfer training.
template <typename T>
struct ModelSpec {
  ModelKind kind = ModelKind::kAutoencoder;
  InputShape input_shape;
  std::vector<LayerSpec<T>> layers;
  std::size_t encoder_len = 0;     // autoencoders: layers [0, encoder_len) form the encoder
  std::vector<bool> frozen_mask;   // one flag per layer
  std::string config_echo;         // key=value lines describing how the model was built

  std::size_t param_count() const {
    std::size_t total = 0;
    for (const auto& l : layers) total += l.param_count();
    return total;
  }

  /// Largest depth accepted by truncate().
  std::size_t max_depth() const {
    return kind == ModelKind::kAutoencoder ? encoder_len : layers.size();
  }

  template <typename U>
  ModelSpec<U> cast() const {
    ModelSpec<U> m;
    m.kind = kind;
    m.input_shape = input_shape;
    m.encoder_len = encoder_len;
    m.frozen_mask = frozen_mask;
    m.config_echo = config_echo;
    for (const auto& l : layers) m.layers.push_back(l.template cast<U>());
    return m;
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct AutoencoderConfig {
  std::size_t input_size = 64;
  std::size_t input_channels = 1;
  std::vector<std::size_t> channel_schedule{16, 8, 8};  // one entry per conv+pool stage
  std::size_t kernel_size = 3;
  std::uint64_t seed = 0;
};

struct ClassifierConfig {
  std::size_t input_size = 64;
  std::size_t input_channels = 1;
  std::vector<std::size_t> conv_channels{16, 32, 64};
  std::size_t hidden_units = 64;
  std::size_t num_classes = 2;
  std::size_t kernel_size = 3;
  std::uint64_t seed = 0;
};

/// Output shape (batch 1) after every layer; throws ShapeError naming the first incompatible layer.
template <typename T>
std::vector<Shape> propagate_shapes(const ModelSpec<T>& model) {
  std::vector<Shape> shapes;
  shapes.reserve(model.layers.size());
  Shape s = model.input_shape.batch(1);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    s = output_shape(model.layers[i], s, i);
    shapes.push_back(s);
  }
  return shapes;
}

/// Checks structural invariants of a complete (untruncated) model.
template <typename T>
void validate(const ModelSpec<T>& model) {
  if (model.layers.empty()) throw ConfigError("model has no layers");
  if (model.frozen_mask.size() != model.layers.size()) {
    throw ConfigError("frozen mask has " + std::to_string(model.frozen_mask.size()) +
                      " entries for " + std::to_string(model.layers.size()) + " layers");
  }
  if (model.encoder_len > model.layers.size()) {
    throw ConfigError("encoder_len " + std::to_string(model.encoder_len) + " exceeds layer count");
  }
  const auto shapes = propagate_shapes(model);
  if (model.kind == ModelKind::kAutoencoder) {
    if (model.encoder_len < 1 || model.encoder_len > model.layers.size()) {
      throw ConfigError("encoder_len " + std::to_string(model.encoder_len) + " outside [1, " +
                        std::to_string(model.layers.size()) + "]");
    }
    if (shapes.back() != model.input_shape.batch(1)) {
      throw ShapeError("autoencoder output " + shapes.back().str() + " differs from input " +
                       model.input_shape.batch(1).str());
    }
  }
}

/// Glorot-uniform weights, zero biases, drawn layer by layer from one seeded stream.
template <typename T>
void glorot_init(LayerSpec<T>& layer, std::mt19937_64& rng) {
  if (!layer.has_params()) return;
  const Shape ws = layer.weight.shape();
  const double receptive = static_cast<double>(ws.h * ws.w);
  const double fan_in = static_cast<double>(ws.c) * receptive;
  const double fan_out = static_cast<double>(ws.n) * receptive;
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (T& w : layer.weight.data()) w = static_cast<T>(dist(rng));
  std::fill(layer.bias.begin(), layer.bias.end(), T(0));
}

template <typename T>
void glorot_init(ModelSpec<T>& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& l : model.layers) glorot_init(l, rng);
}

template <typename T>
ModelSpec<T> build_autoencoder(const AutoencoderConfig& cfg) {
  if (cfg.channel_schedule.empty()) throw ConfigError("channel_schedule must be nonempty");
  const std::size_t stages = cfg.channel_schedule.size();
  if (stages >= 32 || cfg.input_size == 0 || cfg.input_size % (std::size_t{1} << stages) != 0) {
    throw ConfigError("input_size " + std::to_string(cfg.input_size) + " is not divisible by 2^" +
                      std::to_string(stages));
  }
  ModelSpec<T> m;
  m.kind = ModelKind::kAutoencoder;
  m.input_shape = InputShape{cfg.input_channels, cfg.input_size, cfg.input_size};
  std::size_t channels = cfg.input_channels;
  for (std::size_t c : cfg.channel_schedule) {
    m.layers.push_back(LayerSpec<T>::conv(channels, c, Activation::kRelu, cfg.kernel_size));
    m.layers.push_back(LayerSpec<T>::pool());
    channels = c;
  }
  m.encoder_len = m.layers.size();
  for (auto it = cfg.channel_schedule.rbegin(); it != cfg.channel_schedule.rend(); ++it) {
    m.layers.push_back(LayerSpec<T>::conv(channels, *it, Activation::kRelu, cfg.kernel_size));
    m.layers.push_back(LayerSpec<T>::upsample());
    channels = *it;
  }
  m.layers.push_back(
      LayerSpec<T>::conv(channels, cfg.input_channels, Activation::kSigmoid, cfg.kernel_size));
  m.frozen_mask.assign(m.layers.size(), false);

  std::ostringstream echo;
  echo << "kind=autoencoder\ninput_size=" << cfg.input_size
       << "\ninput_channels=" << cfg.input_channels << "\nchannel_schedule=";
  for (std::size_t i = 0; i < stages; ++i) echo << (i ? "," : "") << cfg.channel_schedule[i];
  echo << "\nkernel_size=" << cfg.kernel_size << "\nseed=" << cfg.seed << "\n";
  m.config_echo = echo.str();

  glorot_init(m, cfg.seed);
  validate(m);
  return m;
}

template <typename T>
ModelSpec<T> build_classifier(const ClassifierConfig& cfg) {
  if (cfg.num_classes < 2) {
    throw ConfigError("num_classes must be at least 2, got " + std::to_string(cfg.num_classes));
  }
  if (cfg.conv_channels.empty()) throw ConfigError("conv_channels must be nonempty");
  const std::size_t stages = cfg.conv_channels.size();
  if (stages >= 32 || cfg.input_size == 0 || cfg.input_size % (std::size_t{1} << stages) != 0) {
    throw ConfigError("input_size " + std::to_string(cfg.input_size) + " is not divisible by 2^" +
                      std::to_string(stages));
  }
  ModelSpec<T> m;
  m.kind = ModelKind::kClassifier;
  m.input_shape = InputShape{cfg.input_channels, cfg.input_size, cfg.input_size};
  std::size_t channels = cfg.input_channels;
  for (std::size_t c : cfg.conv_channels) {
    m.layers.push_back(LayerSpec<T>::conv(channels, c, Activation::kRelu, cfg.kernel_size));
    m.layers.push_back(LayerSpec<T>::pool());
    channels = c;
  }
  const std::size_t side = cfg.input_size >> stages;
  const std::size_t features = channels * side * side;
  m.layers.push_back(LayerSpec<T>::flatten());
  m.layers.push_back(LayerSpec<T>::dense(features, cfg.hidden_units, Activation::kRelu));
  m.layers.push_back(LayerSpec<T>::dense(cfg.hidden_units, cfg.num_classes, Activation::kLinear));
  m.encoder_len = 2 * stages;  // end of the convolutional base
  m.frozen_mask.assign(m.layers.size(), false);

  std::ostringstream echo;
  echo << "kind=classifier\ninput_size=" << cfg.input_size
       << "\ninput_channels=" << cfg.input_channels << "\nconv_channels=";
  for (std::size_t i = 0; i < stages; ++i) echo << (i ? "," : "") << cfg.conv_channels[i];
  echo << "\nhidden_units=" << cfg.hidden_units << "\nnum_classes=" << cfg.num_classes
       << "\nkernel_size=" << cfg.kernel_size << "\nseed=" << cfg.seed << "\n";
  m.config_echo = echo.str();

  glorot_init(m, cfg.seed);
  validate(m);
  return m;
}

/// First `depth` layers of `model`, with identical parameter values.
template <typename T>
ModelSpec<T> truncate(const ModelSpec<T>& model, std::size_t depth) {
  const std::size_t max = model.max_depth();
  if (depth < 1 || depth > max) {
    throw RangeError("depth " + std::to_string(depth) + " outside valid range [1, " +
                     std::to_string(max) + "]");
  }
  ModelSpec<T> t;
  t.kind = model.kind;
  t.input_shape = model.input_shape;
  t.layers.assign(model.layers.begin(), model.layers.begin() + static_cast<std::ptrdiff_t>(depth));
  t.frozen_mask.assign(model.frozen_mask.begin(),
                       model.frozen_mask.begin() + static_cast<std::ptrdiff_t>(depth));
  t.encoder_len = std::min(model.encoder_len, depth);
  t.config_echo = model.config_echo;
  return t;
}

namespace detail {
template <typename T>
void check_model_input(const ModelSpec<T>& model, const Tensor<T>& input) {
  const Shape s = input.shape();
  if (s.c != model.input_shape.c || s.h != model.input_shape.h || s.w != model.input_shape.w) {
    throw ShapeError("model input: expected " + model.input_shape.batch(s.n).str() + ", got " +
                     s.str());
  }
}
}  // namespace detail

/// Output of every layer in order; the last element is the model output.
template <typename T>
std::vector<Tensor<T>> forward_model(const ModelSpec<T>& model, const Tensor<T>& input) {
  detail::check_model_input(model, input);
  std::vector<Tensor<T>> acts;
  acts.reserve(model.layers.size());
  const Tensor<T>* x = &input;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    acts.push_back(forward(model.layers[i], *x, i).output);
    x = &acts.back();
  }
  return acts;
}

/// Forward pass keeping per-layer caches for backprop.
template <typename T>
std::vector<ForwardCache<T>> forward_train(const ModelSpec<T>& model, const Tensor<T>& input) {
  detail::check_model_input(model, input);
  std::vector<ForwardCache<T>> caches;
  caches.reserve(model.layers.size());
  const Tensor<T>* x = &input;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    caches.push_back(forward(model.layers[i], *x, i).cache);
    x = &caches.back().output;
  }
  return caches;
}

template <typename T>
struct ModelGrads {
  Tensor<T> grad_input;
  std::vector<GradResult<T>> layers;  // grad_input of each entry is dropped to save memory
};

/// Backprop through the whole chain from the gradient of the final output.
template <typename T>
ModelGrads<T> backward_model(const ModelSpec<T>& model, const std::vector<ForwardCache<T>>& caches,
                             const Tensor<T>& grad_output) {
  if (caches.size() != model.layers.size()) {
    throw ShapeError("backward_model: " + std::to_string(caches.size()) + " caches for " +
                     std::to_string(model.layers.size()) + " layers");
  }
  ModelGrads<T> out;
  out.layers.resize(model.layers.size());
  Tensor<T> g = grad_output;
  for (std::size_t i = model.layers.size(); i-- > 0;) {
    GradResult<T> r = backward(model.layers[i], caches[i], g, i);
    g = std::move(r.grad_input);
    r.grad_input = Tensor<T>();
    out.layers[i] = std::move(r);
  }
  out.grad_input = std::move(g);
  return out;
}

/// Weight and bias slots of every parameterized layer, honoring the frozen mask.
template <typename T>
std::vector<ParamSlot<T>> param_slots(ModelSpec<T>& model, const ModelGrads<T>& grads) {
  std::vector<ParamSlot<T>> slots;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& l = model.layers[i];
    if (!l.has_params()) continue;
    const bool frozen = i < model.frozen_mask.size() && model.frozen_mask[i];
    slots.push_back({l.weight.data(), grads.layers[i].grad_weight.data(), frozen});
    slots.push_back({std::span<T>(l.bias), std::span<const T>(grads.layers[i].grad_bias), frozen});
  }
  return slots;
}

}  // namespace nanolens
