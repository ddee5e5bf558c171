#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "disiv/autodiff.hpp"
#include "disiv/errors.hpp"
#include "disiv/tensor.hpp"

namespace disiv {

/// Adam optimizer state for one parameter list (moments are matched to the
/// parameters by position).
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled (AdamW-style) decay applied as p -= lr * weight_decay * p.
  double weight_decay = 0.0;

  AdamState() = default;
  explicit AdamState(double learning_rate) : lr(learning_rate) {}
};

/// One bias-corrected Adam update in place.
inline void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& s) {
  if (params.size() != grads.size()) {
    throw ContractError("adam: " + std::to_string(params.size()) + " params but " +
                        std::to_string(grads.size()) + " grads");
  }
  if (!(s.lr > 0.0) || !(s.beta1 > 0.0 && s.beta1 < 1.0) || !(s.beta2 > 0.0 && s.beta2 < 1.0) ||
      !(s.eps > 0.0) || s.weight_decay < 0.0) {
    throw ContractError("adam: invalid hyperparameters");
  }
  if (s.m.empty()) {
    for (const auto& p : params) {
      s.m.emplace_back(p.rows(), p.cols());
      s.v.emplace_back(p.rows(), p.cols());
    }
  }
  if (s.m.size() != params.size()) throw ContractError("adam: state/parameter count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k].same_shape(grads[k]) || !params[k].same_shape(s.m[k])) {
      throw ContractError("adam: shape mismatch for parameter " + std::to_string(k) + " (" +
                          params[k].shape_string() + " vs grad " + grads[k].shape_string() + ")");
    }
  }
  ++s.step;
  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].values();
    auto g = grads[k].values();
    auto m = s.m[k].values();
    auto v = s.v[k].values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= s.lr * (mhat / (std::sqrt(vhat) + s.eps) + s.weight_decay * p[i]);
    }
  }
}

inline void adam_step(ParameterList& params, std::span<const Tensor> grads, AdamState& s) {
  std::vector<Tensor> values;
  values.reserve(params.size());
  for (auto& p : params) values.push_back(std::move(p.value));
  try {
    adam_step(std::span<Tensor>(values), grads, s);
  } catch (...) {
    for (std::size_t k = 0; k < params.size(); ++k) params[k].value = std::move(values[k]);
    throw;
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k].value = std::move(values[k]);
}

}  // namespace disiv
