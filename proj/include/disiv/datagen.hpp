#pragma once

// Semi-synthetic networked observational data with known counterfactuals.
//
//   X_raw = [X_IV | X_Conf]
//   Z_true = tanh(X_IV W_proj)                   latent instruments
//   C_net  = A X_Conf                            environmental confounders
//   U ~ N(0, 1)                                  unobserved confounder
//   L = Z_true w_IV + C_net w_C + X_raw w_X + U w_U
//   t ~ Bernoulli(sigmoid(L))
//   y = beta_T t + C_net w_C + X_raw w_X + U w_U + eps
//
// Z_true never enters the outcome equation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "disiv/autodiff.hpp"
#include "disiv/errors.hpp"
#include "disiv/graph.hpp"
#include "disiv/rng.hpp"
#include "disiv/tensor.hpp"

namespace disiv {

enum class SplitLabel : std::uint8_t { Train = 0, Val = 1, Test = 2 };

struct DGPConfig {
  std::size_t K = 10;
  /// Columns of Z_true; 0 means K / 2.
  std::size_t d_z = 0;
  double w_X = 1.0;
  double w_IV = 1.0;
  double w_C = 0.5;
  double w_U = 0.5;
  /// Per-dimension weights drawn as N(0,1) * intensity instead of uniform.
  bool random_weights = false;
  double beta_T = 1.0;
  double noise_std = 0.1;
  std::size_t n_repeats = 5;
  std::array<double, 3> split_ratios{0.6, 0.2, 0.2};
  std::uint64_t seed = 0;
  /// Center and scale the treatment logit to unit standard deviation.
  bool standardize_logit = true;

  // Synthetic graph, used when no edge list is supplied.
  std::size_t n_nodes = 1000;
  double avg_degree = 10.0;
  // Synthetic features: rows are Dirichlet(topic_concentration) topic mixtures.
  double topic_concentration = 0.1;

  std::size_t latent_dim() const { return d_z == 0 ? K / 2 : d_z; }

  void validate() const {
    if (K == 0 || K % 2 != 0) throw ConfigError("dgp.K must be even and positive");
    if (noise_std < 0.0) throw ConfigError("dgp.noise_std must be >= 0");
    if (n_repeats == 0) throw ConfigError("dgp.n_repeats must be >= 1");
    double s = 0.0;
    for (double r : split_ratios) {
      if (!(r > 0.0)) throw ConfigError("dgp.split_ratios must all be > 0");
      s += r;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("dgp.split_ratios must sum to 1");
    if (!(topic_concentration > 0.0)) throw ConfigError("dgp.topic_concentration must be > 0");
  }
};

/// Per-dimension weight vectors of the treatment and outcome equations.
struct DGPWeights {
  Tensor w_IV;  // d_z x 1
  Tensor w_C;   // K/2 x 1
  Tensor w_X;   // K x 1
  double w_U = 0.0;
};

struct Latents {
  Tensor X_raw;   // N x K
  Tensor Z_true;  // N x d_z
  Tensor C_net;   // N x K/2
  Tensor U;       // N x 1
};

struct TreatmentDraw {
  Tensor t;           // N x 1 in {0, 1}
  Tensor logit;       // N x 1, after optional standardization
  Tensor propensity;  // N x 1 in (0, 1)
};

struct Outcomes {
  Tensor y, Y0, Y1;  // N x 1 each
};

struct SyntheticDataset {
  Tensor X_raw;
  SparseGraph graph;
  Tensor Z_true;
  Tensor C_net;
  Tensor U;
  Tensor t;
  Tensor y;
  Tensor Y0;
  Tensor Y1;
  Tensor propensity;
  std::vector<std::vector<SplitLabel>> splits;

  std::size_t n() const { return X_raw.rows(); }
};

// ---------------------------------------------------------------------------

inline std::pair<Tensor, Tensor> split_features(const Tensor& x_raw) {
  if (x_raw.cols() == 0 || x_raw.cols() % 2 != 0) {
    throw ConfigError("split_features: feature dimension " + std::to_string(x_raw.cols()) +
                      " is not even");
  }
  const std::size_t h = x_raw.cols() / 2;
  Tensor iv(x_raw.rows(), h), conf(x_raw.rows(), h);
  for (std::size_t r = 0; r < x_raw.rows(); ++r) {
    for (std::size_t c = 0; c < h; ++c) {
      iv(r, c) = x_raw(r, c);
      conf(r, c) = x_raw(r, h + c);
    }
  }
  return {std::move(iv), std::move(conf)};
}

inline Tensor make_projection(std::size_t in_dim, std::size_t d_z, std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::Projection);
  return standard_normal(in_dim, d_z, rng);
}

/// tanh(X_IV W_proj)
inline Tensor make_latent_iv(const Tensor& x_iv, const Tensor& w_proj) {
  Tensor z = kernels::matmul(x_iv, w_proj);
  for (double& v : z.values()) v = std::tanh(v);
  return z;
}

inline Tensor make_latent_iv(const Tensor& x_iv, std::size_t d_z, std::uint64_t seed) {
  return make_latent_iv(x_iv, make_projection(x_iv.cols(), d_z, seed));
}

inline Tensor make_env_confounder(const SparseGraph& g, const Tensor& x_conf) {
  return neighbor_sum(g, x_conf);
}

inline Tensor sample_unobserved(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("sample_unobserved: n must be >= 1");
  Rng rng = make_rng(seed, Stream::Unobserved);
  return standard_normal(n, 1, rng);
}

inline DGPWeights make_weights(const DGPConfig& cfg) {
  const std::size_t dz = cfg.latent_dim();
  const std::size_t h = cfg.K / 2;
  DGPWeights w{Tensor(dz, 1, cfg.w_IV), Tensor(h, 1, cfg.w_C), Tensor(cfg.K, 1, cfg.w_X),
               cfg.w_U};
  if (cfg.random_weights) {
    Rng rng = make_rng(cfg.seed, Stream::Weights);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (double& v : w.w_IV.values()) v = cfg.w_IV * nd(rng);
    for (double& v : w.w_C.values()) v = cfg.w_C * nd(rng);
    for (double& v : w.w_X.values()) v = cfg.w_X * nd(rng);
  }
  return w;
}

namespace detail {

inline Tensor matvec(const Tensor& m, const Tensor& w, const char* what) {
  if (m.cols() != w.rows() || w.cols() != 1) {
    throw ConfigError(std::string(what) + ": weight vector " + w.shape_string() +
                      " does not conform to " + m.shape_string());
  }
  return kernels::matmul(m, w);
}

/// Confounding part shared by the treatment logit and the outcome.
inline Tensor confounding(const Latents& lat, const DGPWeights& w) {
  const std::size_t n = lat.X_raw.rows();
  if (lat.C_net.rows() != n || lat.U.rows() != n || lat.U.cols() != 1) {
    throw ConfigError("dgp: latent row counts disagree");
  }
  Tensor out = matvec(lat.C_net, w.w_C, "w_C");
  kernels::axpy(1.0, matvec(lat.X_raw, w.w_X, "w_X"), out);
  kernels::axpy(w.w_U, lat.U, out);
  return out;
}

}  // namespace detail

/// Largest share of units whose propensity may round to exactly 0 or 1.
inline constexpr double kMaxSaturatedShare = 0.01;
/// Stored propensities are kept this far inside (0, 1).
inline constexpr double kPropensityGuard = 1e-15;

/// Bernoulli draws t_i ~ sigmoid(logit_i).
inline TreatmentDraw treatment_from_logits(Tensor logit, std::uint64_t seed) {
  const std::size_t n = logit.rows();
  TreatmentDraw d{Tensor(n, 1), std::move(logit), Tensor(n, 1)};
  std::size_t saturated = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = sigmoid_scalar(d.logit[i]);
    if (p <= 0.0 || p >= 1.0) ++saturated;
    d.propensity[i] = std::clamp(p, kPropensityGuard, 1.0 - kPropensityGuard);
  }
  if (static_cast<double>(saturated) > kMaxSaturatedShare * static_cast<double>(n)) {
    throw ConfigError("dgp: treatment logits saturate for " + std::to_string(saturated) + " of " +
                      std::to_string(n) + " units (overlap violated)");
  }
  Rng rng = make_rng(seed, Stream::Treatment);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    d.t[i] = unif(rng) < sigmoid_scalar(d.logit[i]) ? 1.0 : 0.0;
  }
  return d;
}

inline TreatmentDraw gen_treatment(const Latents& lat, const DGPWeights& w, const DGPConfig& cfg) {
  if (lat.Z_true.rows() != lat.X_raw.rows()) throw ConfigError("dgp: Z_true row count");
  Tensor logit = detail::matvec(lat.Z_true, w.w_IV, "w_IV");
  kernels::axpy(1.0, detail::confounding(lat, w), logit);
  if (cfg.standardize_logit && logit.rows() > 1) {
    const double n = static_cast<double>(logit.rows());
    double mean = 0.0;
    for (double v : logit.values()) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : logit.values()) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    if (sd > 1e-12) {
      for (double& v : logit.values()) v = (v - mean) / sd;
    } else {
      for (double& v : logit.values()) v -= mean;
    }
  }
  return treatment_from_logits(std::move(logit), cfg.seed);
}

/// Potential outcomes share one noise draw per unit, so Y1 - Y0 = beta_T.
inline Outcomes gen_outcomes(const Tensor& t, const Latents& lat, const DGPWeights& w,
                             const DGPConfig& cfg) {
  const std::size_t n = lat.X_raw.rows();
  if (t.rows() != n || t.cols() != 1) throw ConfigError("gen_outcomes: treatment shape");
  Outcomes o{Tensor(n, 1), detail::confounding(lat, w), Tensor()};
  Rng rng = make_rng(cfg.seed, Stream::OutcomeNoise);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) o.Y0[i] += cfg.noise_std * nd(rng);
  o.Y1 = o.Y0;
  for (double& v : o.Y1.values()) v += cfg.beta_T;
  for (std::size_t i = 0; i < n; ++i) {
    if (t[i] != 0.0 && t[i] != 1.0) throw ContractError("gen_outcomes: treatment not binary");
    o.y[i] = t[i] == 1.0 ? o.Y1[i] : o.Y0[i];
  }
  return o;
}

/// Part sizes for `n` units: floor(n * r) each, then the remainder goes one
/// unit at a time to the parts with the largest fractional share.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t used = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = static_cast<double>(n) * ratios[k];
    sizes[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    frac[k] = exact - static_cast<double>(sizes[k]);
    used += sizes[k];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++sizes[order[k % 3]];
  for (std::size_t k = 0; k < 3; ++k) {
    if (sizes[k] == 0) {
      throw ConfigError("make_splits: " + std::to_string(n) + " units leave split part " +
                        std::to_string(k) + " empty");
    }
  }
  return sizes;
}

inline std::vector<std::vector<SplitLabel>> make_splits(std::size_t n,
                                                        const std::array<double, 3>& ratios,
                                                        std::size_t n_repeats,
                                                        std::uint64_t seed) {
  const auto sizes = split_sizes(n, ratios);
  std::vector<std::vector<SplitLabel>> out;
  for (std::size_t r = 0; r < n_repeats; ++r) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng = make_rng(seed, Stream::Splits, r);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<SplitLabel> labels(n);
    for (std::size_t k = 0; k < n; ++k) {
      labels[perm[k]] = k < sizes[0]              ? SplitLabel::Train
                        : k < sizes[0] + sizes[1] ? SplitLabel::Val
                                                  : SplitLabel::Test;
    }
    out.push_back(std::move(labels));
  }
  return out;
}

/// Erdos-Renyi graph with edge probability avg_degree / (n - 1).
inline SparseGraph synth_graph(std::size_t n, double avg_degree, std::uint64_t seed) {
  if (n < 2) throw ConfigError("synth_graph: n must be >= 2");
  if (avg_degree < 1.0) throw ConfigError("synth_graph: avg_degree must be >= 1");
  const double p = std::min(1.0, avg_degree / static_cast<double>(n - 1));
  Rng rng = make_rng(seed, Stream::Graph);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (unif(rng) < p) pairs.emplace_back(i, j);
  return SparseGraph(n, pairs);
}

/// Dense topic-mixture features: each row is a Dirichlet(alpha) draw.
inline Tensor synth_features(std::size_t n, std::size_t k, double alpha, std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::Features);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  Tensor x(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += (x(i, c) = gamma(rng));
    for (std::size_t c = 0; c < k; ++c)
      x(i, c) = s > 0.0 ? x(i, c) / s : 1.0 / static_cast<double>(k);
  }
  return x;
}

/// Full generator. Uses `graph` / `features` when given, otherwise
/// synthesizes them from the config.
inline SyntheticDataset generate_dataset(const DGPConfig& cfg,
                                         std::optional<SparseGraph> graph = {},
                                         std::optional<Tensor> features = {}) {
  cfg.validate();
  SyntheticDataset ds;
  ds.graph = graph ? std::move(*graph) : synth_graph(cfg.n_nodes, cfg.avg_degree, cfg.seed);
  const std::size_t n = ds.graph.n_nodes();
  if (features) {
    if (features->rows() != n || features->cols() != cfg.K) {
      throw ConfigError("dgp: features " + features->shape_string() + " do not match " +
                        std::to_string(n) + " nodes x K=" + std::to_string(cfg.K));
    }
    ds.X_raw = std::move(*features);
  } else {
    ds.X_raw = synth_features(n, cfg.K, cfg.topic_concentration, cfg.seed);
  }
  auto [x_iv, x_conf] = split_features(ds.X_raw);
  Latents lat{ds.X_raw, make_latent_iv(x_iv, cfg.latent_dim(), cfg.seed),
              make_env_confounder(ds.graph, x_conf), sample_unobserved(n, cfg.seed)};
  const DGPWeights w = make_weights(cfg);
  TreatmentDraw td = gen_treatment(lat, w, cfg);
  Outcomes o = gen_outcomes(td.t, lat, w, cfg);
  ds.Z_true = std::move(lat.Z_true);
  ds.C_net = std::move(lat.C_net);
  ds.U = std::move(lat.U);
  ds.t = std::move(td.t);
  ds.propensity = std::move(td.propensity);
  ds.y = std::move(o.y);
  ds.Y0 = std::move(o.Y0);
  ds.Y1 = std::move(o.Y1);
  ds.splits = make_splits(n, cfg.split_ratios, cfg.n_repeats, cfg.seed);
  return ds;
}

/// Node ids carrying any of `labels` in split `repeat`, ascending.
inline std::vector<std::size_t> nodes_in(const SyntheticDataset& ds, std::size_t repeat,
                                         std::initializer_list<SplitLabel> labels) {
  if (repeat >= ds.splits.size()) {
    throw ConfigError("split index " + std::to_string(repeat) + " out of range (" +
                      std::to_string(ds.splits.size()) + " repeats)");
  }
  std::vector<std::size_t> out;
  const auto& s = ds.splits[repeat];
  for (std::size_t i = 0; i < s.size(); ++i)
    for (SplitLabel l : labels)
      if (s[i] == l) out.push_back(i);
  return out;
}

}  // namespace disiv
