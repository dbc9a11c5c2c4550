#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "groupcast/error.hpp"
#include "groupcast/nn/tensor.hpp"

namespace groupcast::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamState for_parameters(std::span<Parameter* const> params, AdamConfig config = {}) {
    AdamState s;
    s.config = config;
    for (const Parameter* p : params) {
      s.m.emplace_back(p->value.size(), 0.0);
      s.v.emplace_back(p->value.size(), 0.0);
    }
    return s;
  }

  friend bool operator==(const AdamState& a, const AdamState& b) {
    return a.step == b.step && a.m == b.m && a.v == b.v &&
           a.config.learning_rate == b.config.learning_rate && a.config.beta1 == b.config.beta1 &&
           a.config.beta2 == b.config.beta2 && a.config.epsilon == b.config.epsilon;
  }
};

/// Rescales all gradients together so their joint L2 norm is at most
/// max_norm. Returns the norm before clipping.
inline double clip_global_norm(std::span<std::vector<double>> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double x : g) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) {
      for (double& x : g) x *= s;
    }
  }
  return norm;
}

/// Bias-corrected Adam update. Throws DivergenceError on a non-finite gradient
/// before touching any parameter.
inline void adam_step(AdamState& state, std::span<Parameter* const> params,
                      std::span<const std::vector<double>> grads) {
  expects(params.size() == grads.size() && params.size() == state.m.size(),
          "adam_step: parameter/gradient/state count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    expects(grads[i].size() == params[i]->value.size() && state.m[i].size() == grads[i].size(),
            "adam_step: shape mismatch for " + params[i]->name);
    for (double g : grads[i]) {
      if (!std::isfinite(g)) throw DivergenceError("non-finite gradient for " + params[i]->name);
    }
  }
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->value.values;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace groupcast::nn
