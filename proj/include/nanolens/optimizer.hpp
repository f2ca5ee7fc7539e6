#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nanolens/error.hpp"

namespace nanolens {

enum class OptimizerKind { kSgd, kAdam };

/// Optimizer hyperparameters plus per-slot Adam moments.
template <typename T>
struct OptimizerState {
  OptimizerKind algorithm = OptimizerKind::kAdam;
  T learning_rate = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::uint64_t step = 0;

  static OptimizerState sgd(T lr) {
    OptimizerState s;
    s.algorithm = OptimizerKind::kSgd;
    s.learning_rate = lr;
    return s;
  }
  static OptimizerState adam(T lr) {
    OptimizerState s;
    s.algorithm = OptimizerKind::kAdam;
    s.learning_rate = lr;
    return s;
  }
};

/// A parameter buffer, its gradient and whether it is frozen.
template <typename T>
struct ParamSlot {
  std::span<T> value;
  std::span<const T> grad;
  bool frozen = false;
};

/// One update over all slots. Frozen slots are left untouched; their moments stay zero.
template <typename T>
void optimizer_step(std::span<const ParamSlot<T>> slots, OptimizerState<T>& state) {
  if (!(state.learning_rate > T(0))) throw ConfigError("learning rate must be positive");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].value.size() != slots[i].grad.size()) {
      throw ShapeError("optimizer_step: slot " + std::to_string(i) + " has " +
                       std::to_string(slots[i].value.size()) + " values but " +
                       std::to_string(slots[i].grad.size()) + " gradients");
    }
  }
  ++state.step;
  if (state.algorithm == OptimizerKind::kSgd) {
    for (const auto& slot : slots) {
      if (slot.frozen) continue;
      for (std::size_t j = 0; j < slot.value.size(); ++j) {
        slot.value[j] -= state.learning_rate * slot.grad[j];
      }
    }
    return;
  }
  if (state.first_moment.size() != slots.size()) {
    state.first_moment.assign(slots.size(), {});
    state.second_moment.assign(slots.size(), {});
  }
  const auto t = static_cast<T>(state.step);
  const T correction1 = T(1) - std::pow(state.beta1, t);
  const T correction2 = T(1) - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& slot = slots[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != slot.value.size()) {
      m.assign(slot.value.size(), T(0));
      v.assign(slot.value.size(), T(0));
    }
    if (slot.frozen) continue;
    for (std::size_t j = 0; j < slot.value.size(); ++j) {
      const T g = slot.grad[j];
      m[j] = state.beta1 * m[j] + (T(1) - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (T(1) - state.beta2) * g * g;
      const T m_hat = m[j] / correction1;
      const T v_hat = v[j] / correction2;
      slot.value[j] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace nanolens
