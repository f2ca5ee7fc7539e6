#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nanolens/checkpoint.hpp"
#include "nanolens/dataset.hpp"
#include "nanolens/error.hpp"
#include "nanolens/loss.hpp"
#include "nanolens/model.hpp"
#include "nanolens/optimizer.hpp"
#include "nanolens/synthetic.hpp"

namespace nanolens {

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  std::optional<double> val_metric;  // validation loss (autoencoder) or accuracy (classifier)
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::uint64_t seed = 0;
  std::size_t image_size = 64;
  bool shuffle = true;
  double train_fraction = 0.9;
  std::size_t log_every = 1;                          // epochs between on_epoch calls
  std::function<void(const EpochRecord&)> on_epoch;  // optional progress sink
  std::function<void(const ModelSpec<float>&)> on_step;  // sees the model after every optimizer step

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      throw ConfigError("train fraction must lie in (0, 1)");
    }
    if (image_size < 1) throw ConfigError("image size must be positive");
  }
};

struct TrainResult {
  ModelSpec<float> model;  // best-validation parameters
  std::vector<std::uint8_t> checkpoint;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

/// Loss history as CSV: `epoch,train_loss,<val_name>` (validation column empty when absent).
inline std::string history_csv(const std::vector<EpochRecord>& history, const std::string& val_name) {
  std::ostringstream out;
  out << "epoch,train_loss," << val_name << "\n";
  out.precision(9);
  for (const auto& r : history) {
    out << r.epoch << "," << r.train_loss << ",";
    if (r.val_metric) out << *r.val_metric;
    out << "\n";
  }
  return out.str();
}

enum class RegimeKind { kA1, kA2, kA3 };

/// Training regime: frozen transfer (A1), full fine-tuning (A2) or random init (A3).
struct Regime {
  RegimeKind kind = RegimeKind::kA3;
  std::optional<std::filesystem::path> base_checkpoint;
};

inline std::string_view to_string(RegimeKind r) {
  switch (r) {
    case RegimeKind::kA1: return "a1";
    case RegimeKind::kA2: return "a2";
    case RegimeKind::kA3: return "a3";
  }
  return "?";
}

namespace detail {

/// Index of the first head layer of a classifier (everything before it is the conv base).
inline std::size_t conv_base_end(const ModelSpec<float>& m) {
  std::size_t end = 0;
  while (end < m.layers.size() && (m.layers[end].kind == LayerKind::kConv2D ||
                                   m.layers[end].kind == LayerKind::kMaxPool2x2)) {
    ++end;
  }
  return end;
}

inline Tensor<float> gather(const LoadedDataset& data, std::span<const std::size_t> ids) {
  std::vector<const Tensor<float>*> ptrs;
  ptrs.reserve(ids.size());
  for (std::size_t i : ids) ptrs.push_back(&data.images[i]);
  return stack<float>(ptrs);
}

inline std::vector<std::size_t> gather_labels(const LoadedDataset& data,
                                              std::span<const std::size_t> ids) {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (std::size_t i : ids) out.push_back(data.labels[i]);
  return out;
}

enum class Objective { kReconstruction, kClassification };

struct BatchOutcome {
  double loss_sum = 0;  // loss * batch size
  std::size_t correct = 0;
};

inline std::size_t argmax_row(const Tensor<float>& logits, std::size_t n) {
  const std::size_t k = logits.shape().c;
  const float* row = logits.data().data() + n * k;
  return static_cast<std::size_t>(std::max_element(row, row + k) - row);
}

/// Runs one batch; applies an optimizer step when `opt` is non-null.
inline BatchOutcome run_batch(ModelSpec<float>& model, const LoadedDataset& data,
                              std::span<const std::size_t> ids, Objective objective,
                              OptimizerState<float>* opt) {
  const Tensor<float> x = gather(data, ids);
  BatchOutcome out;
  const auto batch = static_cast<double>(ids.size());
  if (opt == nullptr) {
    const Tensor<float> y = forward_model(model, x).back();
    if (objective == Objective::kReconstruction) {
      out.loss_sum = static_cast<double>(mse_loss(y, x).loss) * batch;
    } else {
      const auto labels = gather_labels(data, ids);
      out.loss_sum = static_cast<double>(softmax_cross_entropy(y, std::span<const std::size_t>(labels)).loss) * batch;
      for (std::size_t n = 0; n < ids.size(); ++n) out.correct += argmax_row(y, n) == labels[n];
    }
    return out;
  }
  const auto caches = forward_train(model, x);
  const Tensor<float>& y = caches.back().output;
  LossResult<float> loss;
  if (objective == Objective::kReconstruction) {
    loss = mse_loss(y, x);
  } else {
    const auto labels = gather_labels(data, ids);
    loss = softmax_cross_entropy(y, std::span<const std::size_t>(labels));
    for (std::size_t n = 0; n < ids.size(); ++n) out.correct += argmax_row(y, n) == labels[n];
  }
  out.loss_sum = static_cast<double>(loss.loss) * batch;
  const auto grads = backward_model(model, caches, loss.grad);
  const auto slots = param_slots(model, grads);
  optimizer_step<float>(slots, *opt);
  return out;
}

inline TrainResult train_loop(ModelSpec<float> model, const LoadedDataset& data,
                              const TrainConfig& cfg, Objective objective) {
  cfg.validate();
  if (data.images.empty()) throw ConfigError("training set is empty");
  const Split split = split_indices(data.images.size(), cfg.train_fraction, cfg.seed);
  OptimizerState<float> opt = cfg.optimizer == OptimizerKind::kAdam
                                  ? OptimizerState<float>::adam(static_cast<float>(cfg.learning_rate))
                                  : OptimizerState<float>::sgd(static_cast<float>(cfg.learning_rate));
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5eedf00dULL);

  TrainResult result;
  std::optional<double> best;
  std::vector<std::size_t> order = split.train;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      const std::span<const std::size_t> ids(order.data() + start, len);
      try {
        loss_sum += run_batch(model, data, ids, objective, &opt).loss_sum;
        if (cfg.on_step) cfg.on_step(model);
      } catch (const Error& e) {
        throw Error("epoch " + std::to_string(epoch) + ", batch starting at position " +
                    std::to_string(start) + ": " + e.what());
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());

    double score;  // lower is better
    if (!split.validation.empty()) {
      double val_loss = 0;
      std::size_t correct = 0;
      for (std::size_t start = 0; start < split.validation.size(); start += cfg.batch_size) {
        const std::size_t len = std::min(cfg.batch_size, split.validation.size() - start);
        const auto o = run_batch(model, data, std::span<const std::size_t>(split.validation.data() + start, len),
                                 objective, nullptr);
        val_loss += o.loss_sum;
        correct += o.correct;
      }
      const auto n_val = static_cast<double>(split.validation.size());
      if (objective == Objective::kReconstruction) {
        rec.val_metric = val_loss / n_val;
        score = *rec.val_metric;
      } else {
        rec.val_metric = static_cast<double>(correct) / n_val;
        score = -*rec.val_metric;
      }
    } else {
      score = rec.train_loss;
    }
    // strict improvement only: ties keep the earlier epoch
    if (!best || score < *best) {
      best = score;
      result.model = model;
      result.best_epoch = epoch;
    }
    result.history.push_back(rec);
    if (cfg.on_epoch && cfg.log_every > 0 && (epoch % cfg.log_every == 0 || epoch == cfg.epochs)) {
      cfg.on_epoch(rec);
    }
  }
  result.checkpoint = serialize_checkpoint(result.model);
  return result;
}

}  // namespace detail

/// Mini-batch minimization of the pixel-wise reconstruction MSE.
inline TrainResult train_autoencoder(const ModelSpec<float>& model, const LoadedDataset& data,
                                     const TrainConfig& cfg) {
  if (model.kind != ModelKind::kAutoencoder) throw ConfigError("train_autoencoder needs an autoencoder");
  if (data.image_size != model.input_shape.h) {
    throw ConfigError("dataset image size " + std::to_string(data.image_size) +
                      " does not match model input " + std::to_string(model.input_shape.h));
  }
  return detail::train_loop(model, data, cfg, detail::Objective::kReconstruction);
}

inline TrainResult train_autoencoder(const ModelSpec<float>& model, const DatasetIndex& index,
                                     const TrainConfig& cfg) {
  return train_autoencoder(model, load_dataset(index, cfg.image_size), cfg);
}

/// Accuracy of `model` over the given samples.
inline double accuracy(const ModelSpec<float>& model, const LoadedDataset& data,
                       std::span<const std::size_t> ids, std::size_t batch_size = 32) {
  if (ids.empty()) return 0.0;
  std::size_t correct = 0;
  auto& m = const_cast<ModelSpec<float>&>(model);  // no optimizer: the model is only read
  for (std::size_t start = 0; start < ids.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, ids.size() - start);
    correct += detail::run_batch(m, data, ids.subspan(start, len),
                                 detail::Objective::kClassification, nullptr).correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ids.size());
}

/// Prepares `model` for a regime. A1/A2 copy the conv base of `base`; A1 also freezes it.
/// The head is re-initialized from `seed` for A1/A2; A3 re-initializes everything.
inline void apply_regime(ModelSpec<float>& model, RegimeKind regime, const ModelSpec<float>* base,
                         std::uint64_t seed) {
  if (model.kind != ModelKind::kClassifier) throw ConfigError("regimes apply to classifiers");
  std::fill(model.frozen_mask.begin(), model.frozen_mask.end(), false);
  if (regime == RegimeKind::kA3) {
    glorot_init(model, seed);
    return;
  }
  if (base == nullptr) {
    throw ConfigError("regime " + std::string(to_string(regime)) + " requires a base checkpoint");
  }
  const std::size_t end = detail::conv_base_end(model);
  if (detail::conv_base_end(*base) != end || base->input_shape != model.input_shape) {
    throw ConfigError("base checkpoint conv stages are incompatible with the model (conv base of " +
                      std::to_string(detail::conv_base_end(*base)) + " vs " + std::to_string(end) +
                      " layers)");
  }
  for (std::size_t i = 0; i < end; ++i) {
    const auto& a = model.layers[i];
    const auto& b = base->layers[i];
    if (a.kind != b.kind || a.units != b.units || a.kernel_size != b.kernel_size ||
        a.activation != b.activation || a.weight.shape() != b.weight.shape()) {
      throw ConfigError("base checkpoint diverges from the model at layer " + std::to_string(i) +
                        " (" + std::string(to_string(b.kind)) + " vs " +
                        std::string(to_string(a.kind)) + ")");
    }
  }
  std::mt19937_64 rng(seed);
  for (std::size_t i = end; i < model.layers.size(); ++i) glorot_init(model.layers[i], rng);
  for (std::size_t i = 0; i < end; ++i) {
    model.layers[i].weight = base->layers[i].weight;
    model.layers[i].bias = base->layers[i].bias;
    model.frozen_mask[i] = regime == RegimeKind::kA1;
  }
}

inline void apply_regime(ModelSpec<float>& model, const Regime& regime, std::uint64_t seed) {
  if (regime.kind == RegimeKind::kA3) {
    apply_regime(model, regime.kind, nullptr, seed);
    return;
  }
  if (!regime.base_checkpoint) {
    throw ConfigError("regime " + std::string(to_string(regime.kind)) + " requires a base checkpoint");
  }
  const auto base = load_checkpoint(*regime.base_checkpoint);
  apply_regime(model, regime.kind, &base, seed);
}

/// Minimizes softmax cross-entropy; best checkpoint by validation accuracy.
inline TrainResult train_classifier(const ModelSpec<float>& model, const LoadedDataset& data,
                                    const TrainConfig& cfg) {
  if (model.kind != ModelKind::kClassifier) throw ConfigError("train_classifier needs a classifier");
  std::size_t classes = 0;
  for (std::size_t l : data.labels) classes = std::max(classes, l + 1);
  if (classes > model.layers.back().units) {
    throw ConfigError("dataset has " + std::to_string(classes) + " classes but the model predicts " +
                      std::to_string(model.layers.back().units));
  }
  if (data.image_size != model.input_shape.h) {
    throw ConfigError("dataset image size " + std::to_string(data.image_size) +
                      " does not match model input " + std::to_string(model.input_shape.h));
  }
  return detail::train_loop(model, data, cfg, detail::Objective::kClassification);
}

inline TrainResult train_classifier(ModelSpec<float> model, const DatasetIndex& index,
                                    const TrainConfig& cfg, const Regime& regime) {
  if (model.layers.back().units != index.class_count()) {
    throw ConfigError("model predicts " + std::to_string(model.layers.back().units) +
                      " classes but the dataset has " + std::to_string(index.class_count()));
  }
  apply_regime(model, regime, cfg.seed);
  return train_classifier(model, load_dataset(index, cfg.image_size), cfg);
}

struct SurrogateConfig {
  std::size_t image_size = 64;
  std::vector<std::size_t> conv_channels{16, 32, 64};
  std::size_t hidden_units = 64;
  std::size_t per_class = 24;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
};

/// Pretrains a classifier on the 8-class oriented-grating task; its conv stages serve as the
/// transfer base for regimes A1 and A2.
inline TrainResult make_surrogate_base(const SurrogateConfig& sc) {
  ClassifierConfig cc;
  cc.input_size = sc.image_size;
  cc.conv_channels = sc.conv_channels;
  cc.hidden_units = sc.hidden_units;
  cc.num_classes = 8;
  cc.seed = sc.seed;
  const auto model = build_classifier<float>(cc);
  TrainConfig tc;
  tc.epochs = sc.epochs;
  tc.seed = sc.seed;
  tc.image_size = sc.image_size;
  return train_classifier(model, synthetic::grating_corpus(sc.per_class, sc.image_size, sc.seed), tc);
}

}  // namespace nanolens
