#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "tensor.hpp"

namespace pdn::ad {

struct AdamConfig {
  double lr = 8e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

template <class T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  std::size_t step = 0;
};

// Bias-corrected Adam; weight decay is applied to the weights directly
// (w -= lr * wd * w), not folded into the gradient.
template <class T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, const AdamConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), T(0));
      state.v.emplace_back(p.size(), T(0));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: parameter count changed");
  for (std::size_t k = 0; k < params.size(); ++k)
    if (state.m[k].size() != params[k].size())
      throw ShapeError("adam_step: moment shape does not match parameter " + std::to_string(k));

  ++state.step;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].mutable_values();
    auto g = params[k].grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<T>(b1 * m[i] + (1 - b1) * gi);
      v[i] = static_cast<T>(b2 * v[i] + (1 - b2) * gi * gi);
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      const double upd = mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w[i];
      w[i] = static_cast<T>(w[i] - cfg.lr * upd);
    }
  }
}

inline double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
  if (total_steps == 0) throw std::invalid_argument("cosine_lr: total_steps must be positive");
  if (step > total_steps) throw std::invalid_argument("cosine_lr: step beyond total_steps");
  return lr0 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps))) / 2.0;
}

}  // namespace pdn::ad
