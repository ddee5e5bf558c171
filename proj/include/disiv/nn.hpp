#pragma once

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "disiv/autodiff.hpp"
#include "disiv/rng.hpp"

namespace disiv {

/// Glorot-uniform weight matrix.
inline Tensor glorot(std::size_t in, std::size_t out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-a, a);
  Tensor w(in, out);
  for (double& v : w.values()) v = u(rng);
  return w;
}

inline void add_linear(ParameterList& params, const std::string& prefix, std::size_t in,
                       std::size_t out, Rng& rng, bool bias = true) {
  params.push_back({prefix + ".W", glorot(in, out, rng)});
  if (bias) params.push_back({prefix + ".b", Tensor(1, out)});
}

inline const Tensor& find_param(const ParameterList& params, const std::string& name) {
  for (const auto& p : params)
    if (p.name == name) return p.value;
  throw ContractError("parameter '" + name + "' not found");
}

/// Parameters recorded on one tape, addressable by name.
class Bound {
 public:
  Bound(Tape& tape, const ParameterList& params, bool trainable) : params_(&params) {
    vars_ = trainable ? bind_params(tape, params) : bind_constants(tape, params);
    for (std::size_t k = 0; k < params.size(); ++k) index_.emplace(params[k].name, k);
  }

  /// Names `params` onto already-recorded vars, position by position.
  Bound(const ParameterList& params, std::span<const Var> vars)
      : params_(&params), vars_(vars.begin(), vars.end()) {
    if (vars.size() != params.size()) throw ContractError("bound: parameter/var count mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) index_.emplace(params[k].name, k);
  }

  Var operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("parameter '" + name + "' not bound");
    return vars_[it->second];
  }
  bool has(const std::string& name) const { return index_.contains(name); }
  const std::vector<Var>& vars() const { return vars_; }

 private:
  const ParameterList* params_;
  std::vector<Var> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline Var linear(const Bound& p, const std::string& prefix, Var x) {
  Var h = matmul(x, p[prefix + ".W"]);
  return p.has(prefix + ".b") ? add_bias(h, p[prefix + ".b"]) : h;
}

}  // namespace disiv
