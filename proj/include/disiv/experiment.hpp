#pragma once

#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "disiv/checkpoint.hpp"
#include "disiv/config.hpp"
#include "disiv/gradcheck.hpp"
#include "disiv/io.hpp"
#include "disiv/metrics.hpp"
#include "disiv/train.hpp"

namespace disiv {

inline constexpr int kReportSchemaVersion = 1;

// ---------------------------------------------------------------------------
// generate

/// Generator output plus the config echo written to its manifest.
struct GeneratedData {
  SyntheticDataset data;
  json config;
};

inline GeneratedData build_dataset(const ExperimentConfig& c) {
  std::optional<SparseGraph> graph;
  std::optional<Tensor> features;
  if (c.edge_list) {
    std::ifstream in(*c.edge_list);
    if (!in) throw IoError("cannot open edge list " + *c.edge_list);
    graph = load_edge_list(in);
  }
  if (c.features) features = matrix_from_csv(read_file(*c.features), *c.features);
  GeneratedData g{generate_dataset(c.dgp, std::move(graph), std::move(features)), {}};
  DGPConfig echo = c.dgp;
  echo.n_nodes = g.data.n();
  g.config = to_json(echo);
  g.config["graph_source"] = c.edge_list ? *c.edge_list : std::string("synthetic");
  g.config["feature_source"] = c.features ? *c.features : std::string("synthetic");
  return g;
}

/// Writes a dataset bundle to `out` and returns its fingerprint.
inline std::string cmd_generate(const ExperimentConfig& c, const fs::path& out) {
  const auto g = build_dataset(c);
  return save_bundle(out, g.data, g.config, c.dgp.seed);
}

// ---------------------------------------------------------------------------
// train

struct TrainedRun {
  Stage1Checkpoint stage1;
  Stage2Checkpoint stage2;
  TrainingLog log;
};

inline TrainedRun train_run(const Bundle& b, std::size_t split, const TrainConfig& cfg) {
  TrainingData d(b.data, split, cfg);
  auto s1 = train_stage1(d, cfg);
  auto s2 = train_stage2(d, s1.params, cfg);
  const Provenance from{b.fingerprint, split, cfg};
  TrainedRun run{{std::move(s1.params), from}, {std::move(s2.model), from}, std::move(s1.log)};
  run.log.insert(run.log.end(), s2.log.begin(), s2.log.end());
  return run;
}

/// stage,epoch,total,treat,elbo,ortho,val,best_val; stage-2 rows leave the
/// component columns empty.
inline std::string log_to_csv(const TrainingLog& log) {
  std::string out = "stage,epoch,total,treat,elbo,ortho,val,best_val\n";
  auto cell = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
  for (const auto& r : log) {
    out += std::to_string(r.stage) + ',' + std::to_string(r.epoch) + ',' + cell(r.total) + ',' +
           cell(r.treat) + ',' + cell(r.elbo) + ',' + cell(r.ortho) + ',' + cell(r.val) + ',' +
           cell(r.best_val) + '\n';
  }
  return out;
}

inline const char* kStage1File = "stage1.json";
inline const char* kStage2File = "stage2.json";
inline const char* kLogFile = "training_log.csv";

inline TrainedRun cmd_train(const fs::path& bundle_dir, const TrainConfig& cfg, std::size_t split,
                            const fs::path& out) {
  const Bundle b = load_bundle(bundle_dir);
  auto run = train_run(b, split, cfg);
  save_checkpoint(out / kStage1File, run.stage1);
  save_checkpoint(out / kStage2File, run.stage2);
  write_file(out / kLogFile, log_to_csv(run.log));
  return run;
}

// ---------------------------------------------------------------------------
// evaluate

struct R2Pairs {
  R2Result z_Z, z_C, e_Z, e_C;
};

struct Evaluation {
  RunMetrics metrics;
  R2Pairs r2;
  std::vector<std::size_t> within;
  std::vector<std::size_t> out;
  double ate_hat_within = 0.0;
  double ate_hat_out = 0.0;
};

/// Replaces the outcome head's effect read-out: node ids -> tau_hat.
using EffectFn = std::function<std::vector<double>(const std::vector<std::size_t>&)>;

namespace detail {

inline void check_shapes(const ParameterList& got, const ParameterList& want,
                         const std::string& what) {
  if (got.size() != want.size()) throw IntegrityError(what + ": parameter count differs from model");
  for (std::size_t k = 0; k < got.size(); ++k) {
    if (got[k].name != want[k].name || !got[k].value.same_shape(want[k].value)) {
      throw IntegrityError(what + ": parameter " + got[k].name + " " +
                           got[k].value.shape_string() + " does not match model " +
                           want[k].name + " " + want[k].value.shape_string());
    }
  }
}

inline void check_provenance(const Provenance& p, const Bundle& b, std::size_t split,
                             const char* what) {
  if (p.dataset_fingerprint != b.fingerprint) {
    throw IntegrityError(std::string(what) + " was trained on a different bundle (" +
                         p.dataset_fingerprint.substr(0, 12) + " vs " +
                         b.fingerprint.substr(0, 12) + ")");
  }
  if (p.split != split) {
    throw IntegrityError(std::string(what) + " was trained on split " + std::to_string(p.split) +
                         ", not " + std::to_string(split));
  }
}

inline std::vector<double> tau_of(const SyntheticDataset& ds, const std::vector<std::size_t>& nodes) {
  std::vector<double> tau(nodes.size());
  for (std::size_t k = 0; k < nodes.size(); ++k) tau[k] = ds.Y1[nodes[k]] - ds.Y0[nodes[k]];
  return tau;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

inline std::string setting_label(double w_C, double w_U) {
  auto f = [](double v) {
    std::string s = format_double(v);
    if (s.find_first_of(".e") == std::string::npos) s += ".0";
    return s;
  };
  return f(w_C) + "-" + f(w_U);
}

/// Within-sample nodes are train + val, out-of-sample nodes are test.
inline Evaluation evaluate_run(const Bundle& b, const Stage1Checkpoint& s1,
                               const Stage2Checkpoint& s2, std::size_t split,
                               const EvalConfig& eval, const EffectFn& effect_override = {}) {
  detail::check_provenance(s1.from, b, split, "stage-1 checkpoint");
  detail::check_provenance(s2.from, b, split, "stage-2 checkpoint");
  const TrainConfig& cfg = s1.from.train;
  TrainingData d(b.data, split, cfg);
  detail::check_shapes(s1.params.params, init_stage1(d.x.cols(), cfg).params, "stage-1 checkpoint");
  detail::check_shapes(s2.model.params.params, init_stage2(d.x.cols(), s2.from.train).params,
                       "stage-2 checkpoint");

  Evaluation ev;
  ev.within = nodes_in(b.data, split, {SplitLabel::Train, SplitLabel::Val});
  ev.out = d.test;
  auto effects = [&](const std::vector<std::size_t>& nodes) {
    if (effect_override) return effect_override(nodes);
    return estimate_effects(s2.model, d, nodes, s2.from.train).tau_hat;
  };
  const auto tw = effects(ev.within);
  const auto to = effects(ev.out);
  const auto truth_w = detail::tau_of(b.data, ev.within);
  const auto truth_o = detail::tau_of(b.data, ev.out);
  ev.metrics.method = to_string(cfg.ablation);
  ev.metrics.setting = setting_label(b.config.value("w_C", 0.0), b.config.value("w_U", 0.0));
  ev.metrics.split = split;
  ev.metrics.pehe_within = pehe(tw, truth_w);
  ev.metrics.ate_within = ate_error(tw, truth_w);
  ev.metrics.pehe_out = pehe(to, truth_o);
  ev.metrics.ate_out = ate_error(to, truth_o);
  ev.ate_hat_within = detail::mean_of(tw);
  ev.ate_hat_out = detail::mean_of(to);

  const auto s = stage1_predict(s1.params, d, cfg);
  const auto& ds = b.data;
  if (eval.r2_mode == R2Mode::InSample) {
    ev.r2 = {r2_alignment(s.mu, ds.Z_true), r2_alignment(s.mu, ds.C_net),
             r2_alignment(s.e, ds.Z_true), r2_alignment(s.e, ds.C_net)};
  } else {
    auto pair = [&](const Tensor& latent, const Tensor& target) {
      return r2_alignment_heldout(detail::rows_of(latent, ev.within),
                                  detail::rows_of(target, ev.within),
                                  detail::rows_of(latent, ev.out), detail::rows_of(target, ev.out));
    };
    ev.r2 = {pair(s.mu, ds.Z_true), pair(s.mu, ds.C_net), pair(s.e, ds.Z_true),
             pair(s.e, ds.C_net)};
  }
  return ev;
}

// ---------------------------------------------------------------------------
// reports

inline json r2_json(const R2Result& r) {
  return json{{"raw", r.mean}, {"clipped", r.clipped()}, {"skipped_columns", r.skipped}};
}

inline json run_json(const Evaluation& ev, std::uint64_t seed, const std::string& fingerprint) {
  const auto& m = ev.metrics;
  return json{{"status", "ok"},
              {"method", m.method},
              {"setting", m.setting},
              {"split", m.split},
              {"seed", seed},
              {"dataset_fingerprint", fingerprint},
              {"pehe_within", m.pehe_within},
              {"ate_within", m.ate_within},
              {"pehe_out", m.pehe_out},
              {"ate_out", m.ate_out},
              {"ate_hat_within", ev.ate_hat_within},
              {"ate_hat_out", ev.ate_hat_out},
              {"n_within", ev.within.size()},
              {"n_out", ev.out.size()},
              {"r2",
               {{"z_Z_true", r2_json(ev.r2.z_Z)},
                {"z_C_net", r2_json(ev.r2.z_C)},
                {"e_Z_true", r2_json(ev.r2.e_Z)},
                {"e_C_net", r2_json(ev.r2.e_C)}}}};
}

inline json failed_run_json(const std::string& method, const std::string& setting,
                            std::size_t split, std::uint64_t seed, const std::string& error) {
  return json{{"status", "failed"}, {"method", method}, {"setting", setting},
              {"split", split},     {"seed", seed},     {"error", error}};
}

/// Summary rows for every (method, setting) cell with at least one finished
/// run, in first-seen order.
inline std::vector<AggregateRow> aggregate_all(const std::vector<RunMetrics>& runs) {
  std::vector<std::pair<std::string, std::string>> cells;
  for (const auto& r : runs) {
    const std::pair<std::string, std::string> key{r.method, r.setting};
    if (std::find(cells.begin(), cells.end(), key) == cells.end()) cells.push_back(key);
  }
  std::vector<AggregateRow> rows;
  for (const auto& [method, setting] : cells) {
    std::vector<RunMetrics> cell;
    for (const auto& r : runs)
      if (r.method == method && r.setting == setting) cell.push_back(r);
    auto part = aggregate_runs(cell);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

inline json aggregates_json(const std::vector<AggregateRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    arr.push_back(json{{"metric", r.metric},
                       {"method", r.method},
                       {"setting", r.setting},
                       {"regime", r.regime},
                       {"mean", r.stats.mean},
                       {"std", r.stats.std},
                       {"count", r.stats.count}});
  }
  return json{{"rows", arr}};
}

inline json config_fingerprint(const ExperimentConfig& c, const std::vector<std::uint64_t>& seeds,
                               const std::vector<std::string>& datasets) {
  return json{{"sha256", sha256_hex(to_json(c).dump())},
              {"w_C", c.sweep.w_C},
              {"w_U", c.sweep.w_U},
              {"dgp_seed", c.dgp.seed},
              {"seeds", seeds},
              {"dataset_fingerprints", datasets}};
}

inline json make_report(const ExperimentConfig& c, json fingerprint, json runs,
                        const std::vector<AggregateRow>& rows) {
  return json{{"schema_version", kReportSchemaVersion},
              {"config_fingerprint", std::move(fingerprint)},
              {"config", to_json(c)},
              {"runs", std::move(runs)},
              {"aggregates", aggregates_json(rows)}};
}

/// Checks a report against the published layout; throws ParseError naming
/// the first offending field.
inline void validate_report(const json& r) {
  auto fail = [](const std::string& what) { throw ParseError("report: " + what); };
  auto need = [&](const json& obj, const char* key, auto pred, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key) || !pred(obj.at(key))) fail(where + key);
  };
  auto is_num = [](const json& v) { return v.is_number(); };
  auto is_str = [](const json& v) { return v.is_string(); };
  auto is_uint = [](const json& v) { return v.is_number_unsigned(); };
  auto is_obj = [](const json& v) { return v.is_object(); };
  auto is_arr = [](const json& v) { return v.is_array(); };
  auto nonneg = [](const json& v) { return v.is_number() && v.get<double>() >= 0.0; };

  need(r, "schema_version", [](const json& v) { return v == kReportSchemaVersion; }, "");
  need(r, "config_fingerprint", is_obj, "");
  need(r.at("config_fingerprint"), "sha256", is_str, "config_fingerprint.");
  need(r.at("config_fingerprint"), "seeds", is_arr, "config_fingerprint.");
  need(r, "runs", is_arr, "");
  need(r, "aggregates", is_obj, "");
  for (const auto& run : r.at("runs")) {
    need(run, "status", is_str, "runs[].");
    need(run, "method", is_str, "runs[].");
    need(run, "setting", is_str, "runs[].");
    need(run, "split", is_uint, "runs[].");
    if (run.at("status") != "ok") {
      need(run, "error", is_str, "runs[].");
      continue;
    }
    for (const char* k : {"pehe_within", "ate_within", "pehe_out", "ate_out"})
      need(run, k, nonneg, "runs[].");
    need(run, "n_within", is_uint, "runs[].");
    need(run, "n_out", is_uint, "runs[].");
    need(run, "r2", is_obj, "runs[].");
    for (const char* k : {"z_Z_true", "z_C_net", "e_Z_true", "e_C_net"}) {
      need(run.at("r2"), k, is_obj, "runs[].r2.");
      need(run.at("r2").at(k), "clipped", is_num, std::string("runs[].r2.") + k + ".");
    }
  }
  need(r.at("aggregates"), "rows", is_arr, "aggregates.");
  for (const auto& row : r.at("aggregates").at("rows")) {
    for (const char* k : {"metric", "method", "setting", "regime"}) need(row, k, is_str, "aggregates.rows[].");
    need(row, "mean", nonneg, "aggregates.rows[].");
    need(row, "std", nonneg, "aggregates.rows[].");
    need(row, "count", is_uint, "aggregates.rows[].");
  }
}

inline const char* kReportFile = "report.json";
inline const char* kAggregateFile = "aggregate.csv";

inline Evaluation cmd_evaluate(const ExperimentConfig& c, const fs::path& bundle_dir,
                               const fs::path& checkpoint_dir, std::size_t split,
                               const fs::path& out) {
  const Bundle b = load_bundle(bundle_dir);
  const auto s1 = load_stage1(checkpoint_dir / kStage1File);
  const auto s2 = load_stage2(checkpoint_dir / kStage2File);
  auto ev = evaluate_run(b, s1, s2, split, c.eval);
  const auto seed = s1.from.train.seed;
  json runs = json::array({run_json(ev, seed, b.fingerprint)});
  json report = make_report(c, config_fingerprint(c, {seed}, {b.fingerprint}), runs,
                            aggregate_all({ev.metrics}));
  validate_report(report);
  write_file(out / kReportFile, report.dump(2) + "\n");
  return ev;
}

// ---------------------------------------------------------------------------
// sweep

/// (w_C, w_U) pairs with w_C <= w_U, in list order.
inline std::vector<std::pair<double, double>> sweep_settings(const SweepConfig& s) {
  std::vector<std::pair<double, double>> out;
  for (double c : s.w_C)
    for (double u : s.w_U)
      if (c <= u && std::find(out.begin(), out.end(), std::pair{c, u}) == out.end())
        out.emplace_back(c, u);
  if (out.empty()) throw ConfigError("sweep: no (w_C, w_U) pair with w_C <= w_U");
  return out;
}

/// method,metric,<setting>/<regime>... with "mean±std" cells.
inline std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::vector<std::string> methods, settings;
  auto add = [](std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
  };
  for (const auto& r : rows) {
    add(methods, r.method);
    add(settings, r.setting);
  }
  const char* regimes[] = {"within", "out"};
  std::string out = "method,metric";
  for (const auto& s : settings)
    for (const char* g : regimes) out += "," + s + "/" + g;
  out += '\n';
  for (const auto& m : methods) {
    for (const char* metric : {"pehe", "ate"}) {
      out += m + "," + metric;
      for (const auto& s : settings) {
        for (const char* g : regimes) {
          out += ',';
          for (const auto& r : rows) {
            if (r.method == m && r.setting == s && r.metric == metric && r.regime == g) {
              char buf[64];
              std::snprintf(buf, sizeof buf, "%.4f±%.4f", r.stats.mean, r.stats.std);
              out += buf;
            }
          }
        }
      }
      out += '\n';
    }
  }
  return out;
}

struct SweepResult {
  json report;
  std::string aggregate_csv;
  std::size_t failures = 0;
};

/// Every setting gets one bundle; every split of it is trained once per
/// ablation with train seed = train.seed + split. Failed runs are recorded
/// and skipped.
inline SweepResult cmd_sweep(const ExperimentConfig& c, const fs::path& out) {
  c.validate();
  json runs = json::array();
  std::vector<RunMetrics> finished;
  std::vector<std::string> datasets;
  std::vector<std::uint64_t> seeds;
  for (std::size_t r = 0; r < c.dgp.n_repeats; ++r) seeds.push_back(c.train.seed + r);
  std::size_t failures = 0;

  for (auto [wc, wu] : sweep_settings(c.sweep)) {
    ExperimentConfig cell = c;
    cell.dgp.w_C = wc;
    cell.dgp.w_U = wu;
    const std::string label = setting_label(wc, wu);
    const fs::path bundle_dir = out / "bundles" / label;
    cmd_generate(cell, bundle_dir);
    const Bundle b = load_bundle(bundle_dir);
    datasets.push_back(b.fingerprint);
    for (std::size_t split = 0; split < c.dgp.n_repeats; ++split) {
      for (Ablation a : c.sweep.ablations) {
        TrainConfig tc = c.train;
        tc.ablation = a;
        tc.seed = c.train.seed + split;
        try {
          auto run = train_run(b, split, tc);
          auto ev = evaluate_run(b, run.stage1, run.stage2, split, c.eval);
          runs.push_back(run_json(ev, tc.seed, b.fingerprint));
          finished.push_back(ev.metrics);
        } catch (const Error& e) {
          ++failures;
          runs.push_back(failed_run_json(to_string(a), label, split, tc.seed, e.what()));
        }
      }
    }
  }
  const auto rows = finished.empty() ? std::vector<AggregateRow>{} : aggregate_all(finished);
  SweepResult res{make_report(c, config_fingerprint(c, seeds, datasets), runs, rows),
                  aggregate_csv(rows), failures};
  validate_report(res.report);
  write_file(out / kReportFile, res.report.dump(2) + "\n");
  write_file(out / kAggregateFile, res.aggregate_csv);
  return res;
}

// ---------------------------------------------------------------------------
// gradcheck

inline constexpr double kGradcheckTolerance = 1e-4;

struct GradcheckLine {
  std::string component;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  bool exempt = false;

  bool passed() const { return exempt || max_rel_error < kGradcheckTolerance; }
};

namespace detail {

inline SparseGraph gradcheck_graph(std::size_t n, Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (u(rng) < 0.4) pairs.emplace_back(i, j);
  return SparseGraph(n, pairs);
}

inline std::vector<Tensor> values_of(const ParameterList& p) {
  std::vector<Tensor> v;
  for (const auto& x : p) v.push_back(x.value);
  return v;
}

/// Random non-zero bias vectors so every parameter gets a generic gradient.
inline void jitter(ParameterList& params, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto& p : params)
    if (p.name.ends_with(".b"))
      for (double& v : p.value.values()) v = nd(rng);
}

}  // namespace detail

/// Central-difference checks of every layer and loss on small random
/// instances. Deterministic for a given seed.
inline std::vector<GradcheckLine> run_gradcheck_suite(std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::Init, 0x9c);
  const std::size_t n = 7, k = 4, dz = 3, hidden = 5;
  const SparseGraph g = detail::gradcheck_graph(n, rng);
  const NormalizedAdjacency adj(g);
  const Tensor x = standard_normal(n, k, rng);
  Tensor t(n, 1);
  for (std::size_t i = 0; i < n; ++i) t[i] = i % 2 == 0 ? 1.0 : 0.0;
  const Tensor y = standard_normal(n, 1, rng);
  const Tensor noise = standard_normal(n, dz, rng);
  const Tensor probe = standard_normal(n, dz, rng);

  std::vector<GradcheckLine> lines;
  auto record = [&](const std::string& name, const Fragment& f, std::vector<Tensor> in) {
    auto r = gradcheck(f, std::move(in));
    lines.push_back({name, r.max_rel_error, r.coordinates, false});
  };
  auto weighted = [](Var v, const Tensor& w) { return sum(mul(v, v.tape->constant(w))); };

  for (Activation act :
       {Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Identity}) {
    const Tensor w = standard_normal(k, dz, rng);
    record(std::string("gcn_layer/") + to_string(act),
           [&, act](Tape&, std::span<const Var> v) {
             return weighted(gcn_layer(adj, v[0], v[1], act), probe);
           },
           {x, w});
  }

  {
    TrainConfig deep;
    deep.d_z = dz;
    deep.gcn_layers = 2;
    deep.gcn_activation = Activation::Tanh;
    ParameterList env;
    Rng init = make_rng(seed, Stream::Init, 0x9d);
    add_gcn(env, "env", k, dz, deep.gcn_layers, init);
    record("gcn_stack/2-layer tanh",
           [&](Tape&, std::span<const Var> v) {
             Bound p(env, v.subspan(1));
             return weighted(encode_environment(adj, v[0], p, "env", deep.gcn_activation), probe);
           },
           [&] {
             auto in = detail::values_of(env);
             in.insert(in.begin(), x);
             return in;
           }());
  }

  TrainConfig cfg;
  cfg.hidden = hidden;
  cfg.d_z = dz;
  cfg.seed = seed;
  ParameterList s1 = init_stage1(k, cfg).params;
  detail::jitter(s1, rng);

  {
    const Tensor wmu = standard_normal(n, dz, rng), wlv = standard_normal(n, dz, rng);
    record("encoder",
           [&](Tape&, std::span<const Var> v) {
             Bound p(s1, v.subspan(1));
             auto post = encode_iv(v[0], p);
             return add(weighted(post.mu, wmu), weighted(post.logvar, wlv));
           },
           [&] {
             auto in = detail::values_of(s1);
             in.insert(in.begin(), x);
             return in;
           }());
  }
  for (bool conditional : {true, false}) {
    const Tensor wx = standard_normal(n, k, rng);
    record(conditional ? "decoder/conditional" : "decoder/unconditional",
           [&, conditional](Tape&, std::span<const Var> v) {
             Bound p(s1, v.subspan(2));
             return weighted(decode(v[0], v[1], p, conditional), wx);
           },
           [&] {
             auto in = detail::values_of(s1);
             in.insert(in.begin(), {standard_normal(n, dz, rng), standard_normal(n, dz, rng)});
             return in;
           }());
  }
  record("reparameterize",
         [&](Tape&, std::span<const Var> v) { return weighted(reparameterize(v[0], v[1], noise), probe); },
         {standard_normal(n, dz, rng), standard_normal(n, dz, rng)});
  record("elbo_loss",
         [&](Tape&, std::span<const Var> v) { return elbo_loss(v[0], v[1], v[2], v[3]).total; },
         {x, standard_normal(n, k, rng), standard_normal(n, dz, rng), standard_normal(n, dz, rng)});
  {
    const Tensor z = standard_normal(n, dz, rng), e = standard_normal(n, dz, rng);
    record("ortho_loss/z",
           [&](Tape&, std::span<const Var> v) { return ortho_loss(v[0], v[1]); }, {z, e});
    // The e input sits behind the stop-gradient: its analytic gradient must be
    // exactly zero, and it is reported as exempt rather than differenced.
    Tape tape;
    Var zv = tape.leaf(z), ev = tape.leaf(e);
    Var l = ortho_loss(zv, ev);
    tape.backward(l);
    const Tensor ge = tape.grad(ev);
    bool zero = true;
    for (double v : ge.values()) zero = zero && v == 0.0;
    GradcheckLine line{"ortho_loss/e (stop-gradient)", zero ? 0.0 : 1.0, ge.size(), zero};
    lines.push_back(line);
  }
  record("bce",
         [&](Tape&, std::span<const Var> v) { return bce(sigmoid(v[0]), t); },
         {standard_normal(n, 1, rng)});
  record("treat_head",
         [&](Tape&, std::span<const Var> v) {
           Bound p(s1, v.subspan(2));
           return treat_loss(v[0], v[1], t, p).loss;
         },
         [&] {
           auto in = detail::values_of(s1);
           in.insert(in.begin(), {standard_normal(n, dz, rng), standard_normal(n, dz, rng)});
           return in;
         }());

  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  for (Ablation a : {Ablation::Full, Ablation::NoConditionalDecoder, Ablation::NoOrtho}) {
    TrainConfig c = cfg;
    c.ablation = a;
    c.beta = 0.7;
    c.lambda = 0.9;
    record(std::string("stage1_loss/") + to_string(a),
           [&, c](Tape& tape, std::span<const Var> v) {
             Bound p(s1, v);
             return stage1_forward(tape, p, adj, x, t, rows, noise, c).total;
           },
           detail::values_of(s1));
  }
  {
    ParameterList s2 = init_stage2(k, cfg).params;
    detail::jitter(s2, rng);
    Tensor t_hat(n, 1);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (double& v : t_hat.values()) v = u(rng);
    const Standardizer ts = Standardizer::fit(t_hat.values());
    TrainingData d(g, x, t, y, rows, {}, {});
    record("stage2_loss",
           [&](Tape& tape, std::span<const Var> v) {
             Bound p(s2, v);
             return detail::mse(detail::stage2_prediction(tape, p, d, ts, t_hat, rows, cfg), y);
           },
           detail::values_of(s2));
  }
  return lines;
}

}  // namespace disiv
