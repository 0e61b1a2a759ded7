#pragma once

// Adam with bias correction, plus global-norm gradient clipping.

#include <cmath>
#include <cstdint>
#include <vector>

#include "tacoforge/errors.hpp"
#include "tacoforge/tensor.hpp"

namespace tacoforge {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First and second moment buffers, parallel to the parameter list handed to
// adam_step. step counts completed updates (used for bias correction).
template <class S>
struct AdamStateT {
  int64_t step = 0;
  std::vector<std::vector<S>> m;
  std::vector<std::vector<S>> v;

  void init_for(const std::vector<TensorT<S>>& params) {
    step = 0;
    m.clear();
    v.clear();
    m.reserve(params.size());
    v.reserve(params.size());
    for (const auto& p : params) {
      m.emplace_back(p.values().size(), S(0));
      v.emplace_back(p.values().size(), S(0));
    }
  }
};

using AdamState = AdamStateT<float>;

// Global L2 norm over all parameter gradients.
template <class S>
double grad_global_norm(const std::vector<TensorT<S>>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.requires_grad()) continue;
    for (S g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

// Scales all gradients so their global norm is at most max_norm. Returns the
// pre-clip norm. max_norm <= 0 disables clipping.
template <class S>
double clip_grad_global_norm(std::vector<TensorT<S>>& params, double max_norm) {
  const double norm = grad_global_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const S s = static_cast<S>(max_norm / norm);
    for (auto& p : params) {
      if (!p.requires_grad()) continue;
      for (S& g : p.grad()) g *= s;
    }
  }
  return norm;
}

// One Adam update over params' accumulated gradients. Gradients are consumed
// as-is (callers zero them between steps).
template <class S>
void adam_step(std::vector<TensorT<S>>& params, AdamStateT<S>& state, double lr,
               const AdamConfig& cfg = {}) {
  TACO_CHECK(lr > 0.0, "adam_step: learning rate must be positive, got ", lr);
  TACO_CHECK(state.m.size() == params.size() && state.v.size() == params.size(),
             "adam_step: state tracks ", state.m.size(), " tensors but got ", params.size());
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    TACO_CHECK(state.m[i].size() == p.values().size(), "adam_step: moment size mismatch at tensor ",
               i);
    if (!p.requires_grad()) continue;
    S* w = p.values().data();
    const S* g = p.grad().data();
    S* m = state.m[i].data();
    S* v = state.v[i].data();
    const size_t n = p.values().size();
    for (size_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (S(1) - b1) * g[j];
      v[j] = b2 * v[j] + (S(1) - b2) * g[j] * g[j];
      const double mhat = static_cast<double>(m[j]) / bc1;
      const double vhat = static_cast<double>(v[j]) / bc2;
      w[j] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

}  // namespace tacoforge
