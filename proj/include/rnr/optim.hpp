#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rnr/params.hpp"

namespace rnr {

// lr_t = lr0 * (1 - step/total_steps)^power
inline double poly_decay_lr(std::int64_t step, std::int64_t total_steps, double lr0,
                            double power = 0.5) {
  if (total_steps <= 0) throw ConfigError("poly_decay_lr: total_steps must be positive");
  if (step < 0 || step > total_steps)
    throw ContractError("poly_decay_lr: step " + std::to_string(step) + " outside [0," +
                        std::to_string(total_steps) + "]");
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * std::pow(frac, power);
}

// AdamW with decoupled weight decay. Moments live per parameter name and are
// created on first use; shapes follow the parameters.
template <typename T>
struct OptimizerState {
  struct Slot {
    std::vector<T> m, v;
  };
  std::map<std::string, Slot> slots;
  std::int64_t step = 0;
  double lr0 = 1e-3;
  double weight_decay = 0.0;

  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;
};

template <typename T>
using GradMap = std::map<std::string, std::vector<T>>;

template <typename T>
void adamw_step(ParamStore<T>& params, const GradMap<T>& grads, OptimizerState<T>& state,
                double lr_t) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(OptimizerState<T>::beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(OptimizerState<T>::beta2, static_cast<double>(state.step));
  for (auto& [name, param] : params.all()) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;  // unused parameter this step: no update
    const std::vector<T>& g = git->second;
    if (g.size() != param.size())
      throw ShapeError("adamw_step: gradient size mismatch for " + name);
    auto& slot = state.slots[name];
    if (slot.m.empty()) {
      slot.m.assign(param.size(), T(0));
      slot.v.assign(param.size(), T(0));
    }
    T* p = param.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(static_cast<double>(g[i])))
        throw TrainingError("non-finite gradient in parameter '" + name + "' at optimizer step " +
                            std::to_string(state.step));
      // decoupled decay, applied separately from the adaptive update
      p[i] -= static_cast<T>(lr_t * state.weight_decay) * p[i];
      slot.m[i] = static_cast<T>(OptimizerState<T>::beta1) * slot.m[i] +
                  static_cast<T>(1.0 - OptimizerState<T>::beta1) * g[i];
      slot.v[i] = static_cast<T>(OptimizerState<T>::beta2) * slot.v[i] +
                  static_cast<T>(1.0 - OptimizerState<T>::beta2) * g[i] * g[i];
      const T mhat = slot.m[i] / static_cast<T>(bc1);
      const T vhat = slot.v[i] / static_cast<T>(bc2);
      p[i] -= static_cast<T>(lr_t) * mhat /
              (std::sqrt(vhat) + static_cast<T>(OptimizerState<T>::eps));
    }
  }
}

// Scales all gradients so their global L2 norm is at most max_norm.
template <typename T>
void clip_global_norm(GradMap<T>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (T v : g) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const T s = static_cast<T>(max_norm / norm);
  for (auto& [name, g] : grads)
    for (T& v : g) v *= s;
}

}  // namespace rnr
