#pragma once

// Two-stage disentangled-IV model.
//
// Stage 1:  e = GCN(X, A)            environment (confounder) proxy
//           (mu, logvar) = Enc(x_i)  latent instrument posterior, x_i only
//           z = mu + exp(logvar/2) * noise
//           x_hat = Dec([z, e])
//           t_hat = sigmoid(f_T([z, e]))
//           L1 = L_treat + beta * L_elbo + lambda * L_ortho
// Stage 2:  e' = GCN_Y(X, A), y_hat = f_Y([e', t_hat]), L2 = MSE(y, y_hat)
//
// z has no input path into f_Y.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "disiv/autodiff.hpp"
#include "disiv/errors.hpp"
#include "disiv/graph.hpp"
#include "disiv/nn.hpp"
#include "disiv/rng.hpp"

namespace disiv {

enum class Ablation { Full, NoConditionalDecoder, NoOrtho };

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::Full: return "full";
    case Ablation::NoConditionalDecoder: return "no_conditional_decoder";
    case Ablation::NoOrtho: return "no_ortho";
  }
  return "?";
}

inline Ablation parse_ablation(const std::string& s) {
  if (s == "full") return Ablation::Full;
  if (s == "no_conditional_decoder") return Ablation::NoConditionalDecoder;
  if (s == "no_ortho") return Ablation::NoOrtho;
  throw ConfigError("unknown ablation '" + s + "'");
}

/// How the Stage-1 treatment estimate is fed to the outcome head.
enum class TreatmentInput { Probability, Threshold };

inline const char* to_string(TreatmentInput t) {
  return t == TreatmentInput::Probability ? "probability" : "threshold";
}

inline TreatmentInput parse_treatment_input(const std::string& s) {
  if (s == "probability") return TreatmentInput::Probability;
  if (s == "threshold") return TreatmentInput::Threshold;
  throw ConfigError("unknown treatment_input '" + s + "'");
}

/// Column preprocessing applied to X before both stages. `Scale` divides by
/// the column std without centering, which keeps node degree visible after
/// bias-free aggregation.
enum class FeatureScaling { None, Scale, Standardize };

inline const char* to_string(FeatureScaling f) {
  switch (f) {
    case FeatureScaling::None: return "none";
    case FeatureScaling::Scale: return "scale";
    case FeatureScaling::Standardize: return "standardize";
  }
  return "?";
}

inline FeatureScaling parse_feature_scaling(const std::string& s) {
  if (s == "none") return FeatureScaling::None;
  if (s == "scale") return FeatureScaling::Scale;
  if (s == "standardize") return FeatureScaling::Standardize;
  throw ConfigError("unknown feature_scaling '" + s + "'");
}

struct TrainConfig {
  double beta = 0.01;
  double lambda = 1.0;
  double lr_stage1 = 1e-3;
  double lr_stage2 = 3e-3;
  double weight_decay = 0.0;
  std::size_t max_epochs_stage1 = 1000;
  std::size_t max_epochs_stage2 = 1000;
  std::size_t patience = 50;
  std::size_t hidden = 128;
  std::size_t d_z = 16;
  std::size_t gcn_layers = 1;
  Activation gcn_activation = Activation::Relu;
  Ablation ablation = Ablation::Full;
  TreatmentInput treatment_input = TreatmentInput::Probability;
  FeatureScaling feature_scaling = FeatureScaling::Scale;
  std::uint64_t seed = 0;

  double effective_lambda() const { return ablation == Ablation::NoOrtho ? 0.0 : lambda; }

  void validate() const {
    if (beta < 0.0 || lambda < 0.0) throw ConfigError("train.beta and train.lambda must be >= 0");
    if (max_epochs_stage1 == 0 || max_epochs_stage2 == 0) {
      throw ConfigError("train epochs must be >= 1");
    }
    if (!(lr_stage1 > 0.0) || !(lr_stage2 > 0.0)) throw ConfigError("train learning rates must be > 0");
    if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
    if (hidden == 0 || d_z == 0 || gcn_layers == 0) {
      throw ConfigError("train.hidden, train.d_z and train.gcn_layers must be >= 1");
    }
  }
};

/// Trainable parameters of each stage plus the dimensions they were built for.
struct Stage1Params {
  std::size_t input_dim = 0;
  ParameterList params;
};

struct Stage2Params {
  std::size_t input_dim = 0;
  ParameterList params;
};

inline std::string gcn_name(const std::string& prefix, std::size_t layer) {
  return prefix + "." + std::to_string(layer);
}

inline void add_gcn(ParameterList& params, const std::string& prefix, std::size_t in,
                    std::size_t out, std::size_t layers, Rng& rng) {
  for (std::size_t l = 0; l < layers; ++l) {
    params.push_back({gcn_name(prefix, l) + ".W", glorot(l == 0 ? in : out, out, rng)});
  }
}

inline Stage1Params init_stage1(std::size_t input_dim, const TrainConfig& cfg) {
  cfg.validate();
  Rng rng = make_rng(cfg.seed, Stream::Init, 1);
  Stage1Params s{input_dim, {}};
  auto& p = s.params;
  add_gcn(p, "env", input_dim, cfg.d_z, cfg.gcn_layers, rng);
  add_linear(p, "enc.hidden", input_dim, cfg.hidden, rng);
  add_linear(p, "enc.mu", cfg.hidden, cfg.d_z, rng);
  add_linear(p, "enc.logvar", cfg.hidden, cfg.d_z, rng);
  add_linear(p, "dec.hidden", 2 * cfg.d_z, cfg.hidden, rng);
  add_linear(p, "dec.out", cfg.hidden, input_dim, rng);
  add_linear(p, "ft.hidden", 2 * cfg.d_z, cfg.hidden, rng);
  add_linear(p, "ft.out", cfg.hidden, 1, rng);
  return s;
}

inline Stage2Params init_stage2(std::size_t input_dim, const TrainConfig& cfg) {
  cfg.validate();
  Rng rng = make_rng(cfg.seed, Stream::Init, 2);
  Stage2Params s{input_dim, {}};
  auto& p = s.params;
  add_gcn(p, "envY", input_dim, cfg.d_z, cfg.gcn_layers, rng);
  add_linear(p, "fy.hidden", cfg.d_z + 1, cfg.hidden, rng);
  add_linear(p, "fy.out", cfg.hidden, 1, rng);
  return s;
}

/// Copy of `x` with each column divided by its population std and, for
/// `Standardize`, centered first. Constant columns are left unscaled.
inline Tensor scale_columns(const Tensor& x, FeatureScaling mode) {
  if (mode == FeatureScaling::None) return x;
  Tensor out = x;
  const double n = static_cast<double>(x.rows());
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) mean += x(r, c);
    mean /= n;
    double var = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) var += (x(r, c) - mean) * (x(r, c) - mean);
    const double sd = std::sqrt(var / n);
    const double shift = mode == FeatureScaling::Standardize ? mean : 0.0;
    const double div = sd > 1e-12 ? sd : 1.0;
    for (std::size_t r = 0; r < x.rows(); ++r) out(r, c) = (x(r, c) - shift) / div;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Building blocks

/// Stacked GCN layers `prefix.0 .. prefix.L-1`, each followed by `act`.
inline Var encode_environment(const NormalizedAdjacency& adj, Var x, const Bound& p,
                              const std::string& prefix, Activation act) {
  Var h = x;
  for (std::size_t l = 0; p.has(gcn_name(prefix, l) + ".W"); ++l) {
    h = gcn_layer(adj, h, p[gcn_name(prefix, l) + ".W"], act);
  }
  return h;
}

struct Posterior {
  Var mu;
  Var logvar;
};

/// Sees feature rows only, never the graph.
inline Posterior encode_iv(Var x, const Bound& p) {
  Var h = relu(linear(p, "enc.hidden", x));
  return {linear(p, "enc.mu", h), linear(p, "enc.logvar", h)};
}

/// Reconstruction mean from [z, e]; with `conditional` false the e slot is
/// filled with zeros.
inline Var decode(Var z, Var e, const Bound& p, bool conditional) {
  if (z.rows() != e.rows()) throw ContractError("decode: z and e rows differ");
  Var cond = conditional ? e : z.tape->constant(Tensor(e.rows(), e.cols()));
  Var h = relu(linear(p, "dec.hidden", concat_cols(z, cond)));
  return linear(p, "dec.out", h);
}

struct ElboParts {
  Var total;
  Var reconstruction;
  Var kl;
};

/// Negative ELBO per unit, averaged: 0.5 * ||x - x_hat||^2 plus the closed-form
/// KL(N(mu, exp(logvar)) || N(0, I)).
inline ElboParts elbo_loss(Var x, Var x_hat, Var mu, Var logvar) {
  Var recon = scale(mean(row_sum(square(sub(x, x_hat)))), 0.5);
  Var kl_terms = sub(add(exp(logvar), square(mu)), add_scalar(logvar, 1.0));
  Var kl = scale(mean(row_sum(kl_terms)), 0.5);
  return {add(recon, kl), recon, kl};
}

inline constexpr double kCosineEps = 1e-12;

/// Mean |cos(z_i, e_i)| with e behind a stop-gradient.
inline Var ortho_loss(Var z, Var e) { return mean_abs_cosine(z, stop_gradient(e), kCosineEps); }

inline constexpr double kProbClamp = 1e-7;

/// Mean binary cross-entropy of clamped probabilities `t_hat` against labels.
inline Var bce(Var t_hat, const Tensor& t) {
  if (t.rows() != t_hat.rows() || t.cols() != 1) throw DimensionError("bce: label shape");
  for (double v : t.values()) {
    if (v != 0.0 && v != 1.0) throw ContractError("bce: treatment labels must be 0 or 1");
  }
  Var p = clamp(t_hat, kProbClamp, 1.0 - kProbClamp);
  Var labels = t_hat.tape->constant(t);
  Var pos = mul(labels, log(p));
  Var neg = mul(one_minus(labels), log(one_minus(p)));
  return scale(mean(add(pos, neg)), -1.0);
}

struct TreatHead {
  Var loss;
  Var t_hat;
};

inline Var treatment_probability(Var z, Var e, const Bound& p) {
  Var h = relu(linear(p, "ft.hidden", concat_cols(z, e)));
  return sigmoid(linear(p, "ft.out", h));
}

inline TreatHead treat_loss(Var z, Var e, const Tensor& t, const Bound& p) {
  Var t_hat = treatment_probability(z, e, p);
  return {bce(t_hat, t), t_hat};
}

inline Var stage1_loss(Var treat, Var elbo, Var ortho, double beta, double lambda) {
  return add(treat, add(scale(elbo, beta), scale(ortho, lambda)));
}

/// f_Y([e', t])
inline Var outcome_head(Var e_prime, Var t, const Bound& p) {
  Var h = relu(linear(p, "fy.hidden", concat_cols(e_prime, t)));
  return linear(p, "fy.out", h);
}

// ---------------------------------------------------------------------------
// Whole-stage forward passes

struct Stage1Forward {
  Var e;
  Var mu;
  Var logvar;
  Var z;
  Var x_hat;
  Var t_hat;
  ElboParts elbo;
  Var treat;
  Var ortho;
  Var total;
};

/// Stage-1 forward on the rows `rows` of the (full-graph) inputs. `noise`
/// (rows x d_z) drives the reparameterization; pass zeros for the posterior
/// mean.
inline Stage1Forward stage1_forward(Tape& tape, const Bound& p, const NormalizedAdjacency& adj,
                                    const Tensor& x, const Tensor& t,
                                    const std::vector<std::size_t>& rows, const Tensor& noise,
                                    const TrainConfig& cfg) {
  Var xv = tape.constant(x);
  Var e_all = encode_environment(adj, xv, p, "env", cfg.gcn_activation);
  Var e = gather_rows(e_all, rows);
  Var x_rows = gather_rows(xv, rows);
  Tensor t_rows(rows.size(), 1);
  for (std::size_t k = 0; k < rows.size(); ++k) t_rows[k] = t[rows[k]];

  Stage1Forward f;
  f.e = e;
  auto post = encode_iv(x_rows, p);
  f.mu = post.mu;
  f.logvar = post.logvar;
  f.z = reparameterize(post.mu, post.logvar, noise);
  f.x_hat = decode(f.z, e, p, cfg.ablation != Ablation::NoConditionalDecoder);
  f.elbo = elbo_loss(x_rows, f.x_hat, f.mu, f.logvar);
  auto th = treat_loss(f.z, e, t_rows, p);
  f.t_hat = th.t_hat;
  f.treat = th.loss;
  f.ortho = ortho_loss(f.z, e);
  f.total = stage1_loss(f.treat, f.elbo.total, f.ortho, cfg.beta, cfg.effective_lambda());
  return f;
}

}  // namespace disiv
