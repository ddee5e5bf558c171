#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "disiv/adam.hpp"
#include "disiv/datagen.hpp"
#include "disiv/model.hpp"
#include "disiv/rng.hpp"

namespace disiv {

struct EpochRecord {
  int stage = 1;
  std::size_t epoch = 0;
  double total = 0.0;
  /// Stage-1 components; NaN in stage-2 records.
  double treat = std::numeric_limits<double>::quiet_NaN();
  double elbo = std::numeric_limits<double>::quiet_NaN();
  double ortho = std::numeric_limits<double>::quiet_NaN();
  double val = 0.0;
  double best_val = 0.0;
};

using TrainingLog = std::vector<EpochRecord>;

/// Graph, model-ready features and node sets for one split of a dataset.
struct TrainingData {
  NormalizedAdjacency adj;
  Tensor x;
  Tensor t;
  Tensor y;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  TrainingData(const SyntheticDataset& ds, std::size_t split, const TrainConfig& cfg)
      : adj(ds.graph),
        x(scale_columns(ds.X_raw, cfg.feature_scaling)),
        t(ds.t),
        y(ds.y),
        train(nodes_in(ds, split, {SplitLabel::Train})),
        val(nodes_in(ds, split, {SplitLabel::Val})),
        test(nodes_in(ds, split, {SplitLabel::Test})) {}

  TrainingData(const SparseGraph& g, Tensor x_, Tensor t_, Tensor y_,
               std::vector<std::size_t> train_, std::vector<std::size_t> val_,
               std::vector<std::size_t> test_)
      : adj(g),
        x(std::move(x_)),
        t(std::move(t_)),
        y(std::move(y_)),
        train(std::move(train_)),
        val(std::move(val_)),
        test(std::move(test_)) {}
};

namespace detail {

inline Tensor rows_of(const Tensor& v, const std::vector<std::size_t>& rows) {
  Tensor out(rows.size(), v.cols());
  for (std::size_t k = 0; k < rows.size(); ++k)
    for (std::size_t c = 0; c < v.cols(); ++c) out(k, c) = v(rows[k], c);
  return out;
}

/// Keeps the parameters with the lowest validation loss and decides when to
/// stop.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Returns true when training should stop after this epoch.
  bool update(std::size_t epoch, double val, const ParameterList& params) {
    if (!best_ || val < best_val_) {
      best_val_ = val;
      best_epoch_ = epoch;
      best_ = params;
    }
    return epoch - best_epoch_ >= patience_;
  }
  double best_val() const { return best_val_; }
  std::size_t best_epoch() const { return best_epoch_; }
  ParameterList take_best() { return std::move(*best_); }

 private:
  std::size_t patience_;
  double best_val_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::optional<ParameterList> best_;
};

[[noreturn]] inline void diverged(int stage, std::size_t epoch, const std::string& what) {
  throw NumericError("stage " + std::to_string(stage) + " diverged at epoch " +
                     std::to_string(epoch) + " (last good epoch " + std::to_string(epoch - 1) +
                     "): " + what);
}

}  // namespace detail

struct Stage1Result {
  Stage1Params params;
  TrainingLog log;
  std::size_t best_epoch = 0;
};

/// Stage-1 validation loss: L_treat on validation rows at the posterior mean.
inline double stage1_validation(const Stage1Params& s, const TrainingData& d,
                                const TrainConfig& cfg) {
  Tape tape;
  Bound p(tape, s.params, false);
  auto f = stage1_forward(tape, p, d.adj, d.x, d.t, d.val, Tensor(d.val.size(), cfg.d_z), cfg);
  return f.treat.value().item();
}

/// Full-batch Adam on L_treat + beta L_elbo + lambda L_ortho over the train
/// rows, early-stopped on validation L_treat. Returns the best-validation
/// parameters.
inline Stage1Result train_stage1(const TrainingData& d, const TrainConfig& cfg) {
  cfg.validate();
  Stage1Result res{init_stage1(d.x.cols(), cfg), {}, 0};
  AdamState adam(cfg.lr_stage1);
  adam.weight_decay = cfg.weight_decay;
  Rng noise_rng = make_rng(cfg.seed, Stream::Reparam, 1);
  detail::EarlyStopping stop(cfg.patience);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs_stage1; ++epoch) {
    EpochRecord rec;
    rec.stage = 1;
    rec.epoch = epoch;
    try {
      Tape tape;
      Bound p(tape, res.params.params, true);
      const Tensor noise = standard_normal(d.train.size(), cfg.d_z, noise_rng);
      auto f = stage1_forward(tape, p, d.adj, d.x, d.t, d.train, noise, cfg);
      rec.total = f.total.value().item();
      rec.treat = f.treat.value().item();
      rec.elbo = f.elbo.total.value().item();
      rec.ortho = f.ortho.value().item();
      tape.backward(f.total);
      const auto grads = gradients(tape, p.vars());
      adam_step(res.params.params, grads, adam);
      rec.val = stage1_validation(res.params, d, cfg);
    } catch (const NumericError& e) {
      detail::diverged(1, epoch, e.what());
    }
    if (!std::isfinite(rec.total) || !std::isfinite(rec.val)) {
      detail::diverged(1, epoch, "non-finite loss");
    }
    const bool done = stop.update(epoch, rec.val, res.params.params);
    rec.best_val = stop.best_val();
    res.log.push_back(rec);
    if (done) break;
  }
  res.best_epoch = stop.best_epoch();
  res.params.params = stop.take_best();
  return res;
}

/// Stage-1 quantities for every node, with z at the posterior mean.
struct Stage1Outputs {
  Tensor e;
  Tensor mu;
  Tensor logvar;
  Tensor x_hat;
  Tensor t_hat;
};

inline Stage1Outputs stage1_predict(const Stage1Params& s, const TrainingData& d,
                                    const TrainConfig& cfg) {
  std::vector<std::size_t> all(d.x.rows());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Tape tape;
  Bound p(tape, s.params, false);
  auto f = stage1_forward(tape, p, d.adj, d.x, d.t, all, Tensor(all.size(), cfg.d_z), cfg);
  return {f.e.value(), f.mu.value(), f.logvar.value(), f.x_hat.value(), f.t_hat.value()};
}

/// Treatment column fed to the outcome head during Stage-2 training.
inline Tensor stage2_treatment_input(const Tensor& t_hat, TreatmentInput mode) {
  Tensor out = t_hat;
  if (mode == TreatmentInput::Threshold) {
    for (double& v : out.values()) v = v >= 0.5 ? 1.0 : 0.0;
  }
  return out;
}

/// x -> (x - shift) / scale
struct Standardizer {
  double shift = 0.0;
  double scale = 1.0;

  /// Mean and population std of `v`; a constant input keeps scale 1.
  static Standardizer fit(std::span<const double> v) {
    if (v.empty()) throw ContractError("standardizer: no values");
    Standardizer s;
    for (double x : v) s.shift += x;
    s.shift /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - s.shift) * (x - s.shift);
    const double sd = std::sqrt(var / static_cast<double>(v.size()));
    s.scale = sd > 1e-12 ? sd : 1.0;
    return s;
  }
  Tensor forward(Tensor t) const {
    for (double& v : t.values()) v = (v - shift) / scale;
    return t;
  }
  Tensor inverse(Tensor t) const {
    for (double& v : t.values()) v = v * scale + shift;
    return t;
  }
};

/// Outcome network plus the standardizations of its treatment input and its
/// target, both fitted on the training rows.
struct OutcomeModel {
  Stage2Params params;
  Standardizer t_input;
  Standardizer y;
};

struct Stage2Result {
  OutcomeModel model;
  TrainingLog log;
  std::size_t best_epoch = 0;
};

namespace detail {

/// f_Y on standardized treatment input, in standardized outcome units.
inline Var stage2_prediction(Tape& tape, const Bound& p, const TrainingData& d,
                             const Standardizer& t_std, const Tensor& t_col,
                             const std::vector<std::size_t>& rows, const TrainConfig& cfg) {
  Var e_all = encode_environment(d.adj, tape.constant(d.x), p, "envY", cfg.gcn_activation);
  Var e = gather_rows(e_all, rows);
  return outcome_head(e, tape.constant(t_std.forward(rows_of(t_col, rows))), p);
}

inline Var mse(Var pred, const Tensor& target) {
  return mean(square(sub(pred, pred.tape->constant(target))));
}

}  // namespace detail

/// Fits GCN_Y and f_Y on (e', t_hat) -> y over the train rows, with `t_hat`
/// given for every node.
inline Stage2Result train_stage2(const TrainingData& d, const Tensor& t_hat,
                                 const TrainConfig& cfg) {
  cfg.validate();
  if (t_hat.rows() != d.x.rows() || t_hat.cols() != 1) {
    throw DimensionError("train_stage2: t_hat must be N x 1");
  }
  const Tensor t_input = stage2_treatment_input(t_hat, cfg.treatment_input);

  Stage2Result res{{init_stage2(d.x.cols(), cfg), {}, {}}, {}, 0};
  res.model.t_input = Standardizer::fit(detail::rows_of(t_input, d.train).values());
  res.model.y = Standardizer::fit(detail::rows_of(d.y, d.train).values());
  const Tensor y_train = res.model.y.forward(detail::rows_of(d.y, d.train));
  const Tensor y_val = res.model.y.forward(detail::rows_of(d.y, d.val));
  const auto& t_std = res.model.t_input;

  AdamState adam(cfg.lr_stage2);
  adam.weight_decay = cfg.weight_decay;
  detail::EarlyStopping stop(cfg.patience);
  auto& params = res.model.params.params;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs_stage2; ++epoch) {
    EpochRecord rec;
    rec.stage = 2;
    rec.epoch = epoch;
    try {
      Tape tape;
      Bound p(tape, params, true);
      Var loss = detail::mse(detail::stage2_prediction(tape, p, d, t_std, t_input, d.train, cfg), y_train);
      rec.total = loss.value().item();
      tape.backward(loss);
      adam_step(params, gradients(tape, p.vars()), adam);

      Tape vt;
      Bound vp(vt, params, false);
      rec.val = detail::mse(detail::stage2_prediction(vt, vp, d, t_std, t_input, d.val, cfg), y_val)
                    .value()
                    .item();
    } catch (const NumericError& e) {
      detail::diverged(2, epoch, e.what());
    }
    if (!std::isfinite(rec.total) || !std::isfinite(rec.val)) {
      detail::diverged(2, epoch, "non-finite loss");
    }
    const bool done = stop.update(epoch, rec.val, params);
    rec.best_val = stop.best_val();
    res.log.push_back(rec);
    if (done) break;
  }
  res.best_epoch = stop.best_epoch();
  params = stop.take_best();
  return res;
}

/// Stage 2 on top of a trained Stage 1, which is only read.
inline Stage2Result train_stage2(const TrainingData& d, const Stage1Params& stage1,
                                 const TrainConfig& cfg) {
  return train_stage2(d, stage1_predict(stage1, d, cfg).t_hat, cfg);
}

/// f_Y prediction in outcome units for the given treatment column.
inline Tensor predict_outcome(const OutcomeModel& m, const TrainingData& d, const Tensor& t_col,
                              const std::vector<std::size_t>& nodes, const TrainConfig& cfg) {
  Tape tape;
  Bound p(tape, m.params.params, false);
  return m.y.inverse(detail::stage2_prediction(tape, p, d, m.t_input, t_col, nodes, cfg).value());
}

struct EffectEstimate {
  std::vector<double> tau_hat;
  double ate = 0.0;
};

/// tau_hat_i = f_Y(e'_i, 1) - f_Y(e'_i, 0) over `nodes`, and their mean.
inline EffectEstimate estimate_effects(const OutcomeModel& m, const TrainingData& d,
                                       const std::vector<std::size_t>& nodes,
                                       const TrainConfig& cfg) {
  if (nodes.empty()) throw ContractError("estimate_effects: empty node set");
  const std::size_t n = d.x.rows();
  const Tensor y1 = predict_outcome(m, d, Tensor(n, 1, 1.0), nodes, cfg);
  const Tensor y0 = predict_outcome(m, d, Tensor(n, 1, 0.0), nodes, cfg);
  EffectEstimate est;
  est.tau_hat.resize(nodes.size());
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    est.tau_hat[k] = y1[k] - y0[k];
    est.ate += est.tau_hat[k];
  }
  est.ate /= static_cast<double>(nodes.size());
  return est;
}

}  // namespace disiv
