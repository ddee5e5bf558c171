#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "disiv/experiment.hpp"

using namespace disiv;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("disiv_test_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig toy_config() {
  ExperimentConfig c;
  c.dgp.n_nodes = 120;
  c.dgp.avg_degree = 5.0;
  c.dgp.K = 6;
  c.dgp.n_repeats = 2;
  c.dgp.seed = 3;
  c.train.hidden = 8;
  c.train.d_z = 3;
  c.train.max_epochs_stage1 = 8;
  c.train.max_epochs_stage2 = 8;
  c.train.patience = 4;
  c.sweep.w_C = {0.5};
  c.sweep.w_U = {0.5, 1.0};
  c.sweep.ablations = {Ablation::Full, Ablation::NoOrtho};
  return c;
}

void expect_same(const Tensor& a, const Tensor& b) {
  ASSERT_TRUE(a.same_shape(b)) << a.shape_string() << " vs " << b.shape_string();
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]) << i;
}

}  // namespace

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Doubles, ShortestTextRoundTripsBitwise) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double v = nd(rng) * std::pow(10.0, (i % 40) - 20);
    EXPECT_EQ(parse_double(format_double(v), "test"), v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
  EXPECT_THROW(format_double(std::numeric_limits<double>::quiet_NaN()), NumericError);
  EXPECT_THROW(parse_double("1.0x", "test"), ParseError);
}

TEST(MatrixCsv, RoundTripAndErrors) {
  const Tensor m{{1.0, -2.5e-300}, {0.1, 3.0}};
  expect_same(matrix_from_csv(matrix_to_csv(m), "m"), m);
  expect_same(matrix_from_csv("1,2\r\n\r\n3,4\r\n", "m"), Tensor{{1.0, 2.0}, {3.0, 4.0}});
  EXPECT_THROW(matrix_from_csv("1,2\n3\n", "m"), ParseError);
  EXPECT_THROW(matrix_from_csv("1,a\n", "m"), ParseError);
  EXPECT_THROW(matrix_from_csv("", "m"), ParseError);
}

TEST(Bundle, RoundTripIsBitwise) {
  const auto dir = scratch_dir("bundle");
  const auto c = toy_config();
  const auto g = build_dataset(c);
  const auto fp = save_bundle(dir, g.data, g.config, c.dgp.seed);
  const Bundle b = load_bundle(dir);
  EXPECT_EQ(b.fingerprint, fp);
  EXPECT_EQ(b.seed, c.dgp.seed);
  EXPECT_EQ(b.data.graph, g.data.graph);
  expect_same(b.data.X_raw, g.data.X_raw);
  expect_same(b.data.Z_true, g.data.Z_true);
  expect_same(b.data.C_net, g.data.C_net);
  expect_same(b.data.U, g.data.U);
  expect_same(b.data.t, g.data.t);
  expect_same(b.data.y, g.data.y);
  expect_same(b.data.Y0, g.data.Y0);
  expect_same(b.data.Y1, g.data.Y1);
  expect_same(b.data.propensity, g.data.propensity);
  EXPECT_EQ(b.data.splits, g.data.splits);
  EXPECT_EQ(save_bundle(scratch_dir("bundle_again"), b), fp);
}

TEST(Bundle, ManifestListsChecksums) {
  const auto dir = scratch_dir("manifest");
  const auto c = toy_config();
  cmd_generate(c, dir);
  const json m = json::parse(read_file(dir / kManifestName));
  EXPECT_EQ(m.at("version"), kBundleVersion);
  EXPECT_EQ(m.at("n_nodes"), 120);
  for (const auto& [name, sha] : m.at("files").items()) EXPECT_EQ(sha256_hex(read_file(dir / name)), sha);
  EXPECT_TRUE(m.at("files").contains("split_1.csv"));
}

TEST(Bundle, TamperedFileIsIntegrityError) {
  const auto dir = scratch_dir("tamper");
  cmd_generate(toy_config(), dir);
  std::string y = read_file(dir / "y.csv");
  y[0] = y[0] == '1' ? '2' : '1';
  write_file(dir / "y.csv", y);
  EXPECT_THROW(load_bundle(dir), IntegrityError);
}

TEST(Bundle, MissingFileIsIoError) {
  const auto dir = scratch_dir("missing");
  cmd_generate(toy_config(), dir);
  fs::remove(dir / "t.csv");
  EXPECT_THROW(load_bundle(dir), IoError);
  EXPECT_THROW(load_bundle(dir / "nope"), IoError);
}

TEST(Bundle, UnsupportedVersionIsIntegrityError) {
  const auto dir = scratch_dir("version");
  cmd_generate(toy_config(), dir);
  json m = json::parse(read_file(dir / kManifestName));
  m["version"] = kBundleVersion + 1;
  write_file(dir / kManifestName, m.dump(2));
  EXPECT_THROW(load_bundle(dir), IntegrityError);
}

TEST(Checkpoint, TextRoundTripIsBitwise) {
  const auto c = toy_config();
  const auto g = build_dataset(c);
  const Bundle b{g.data, g.config, c.dgp.seed, "f00d"};
  const auto run = train_run(b, 1, c.train);
  const std::string t1 = checkpoint_text(run.stage1), t2 = checkpoint_text(run.stage2);
  const auto s1 = stage1_from_text(t1, "s1");
  const auto s2 = stage2_from_text(t2, "s2");
  EXPECT_EQ(checkpoint_text(s1), t1);
  EXPECT_EQ(checkpoint_text(s2), t2);
  for (std::size_t k = 0; k < s1.params.params.size(); ++k)
    expect_same(s1.params.params[k].value, run.stage1.params.params[k].value);
  EXPECT_EQ(s2.model.y.scale, run.stage2.model.y.scale);
  EXPECT_EQ(s2.from.split, 1u);
  EXPECT_EQ(s2.from.dataset_fingerprint, "f00d");
  EXPECT_THROW(stage2_from_text(t1, "s1"), IntegrityError);
  EXPECT_THROW(stage1_from_text("{\"format\": \"other\"}", "x"), IntegrityError);
  EXPECT_THROW(stage1_from_text("{", "x"), ParseError);
}

TEST(Checkpoint, ShapeMismatchIsRejectedAtEvaluation) {
  const auto c = toy_config();
  const auto g = build_dataset(c);
  const Bundle b{g.data, g.config, c.dgp.seed, "fp"};
  auto run = train_run(b, 0, c.train);
  run.stage1.params.params[0].value = Tensor(2, 2);
  EXPECT_THROW(evaluate_run(b, run.stage1, run.stage2, 0, c.eval), IntegrityError);
}

TEST(Evaluate, ProvenanceMismatchIsIntegrityError) {
  const auto c = toy_config();
  const auto g = build_dataset(c);
  const Bundle b{g.data, g.config, c.dgp.seed, "fp"};
  const auto run = train_run(b, 0, c.train);
  EXPECT_THROW(evaluate_run(b, run.stage1, run.stage2, 1, c.eval), IntegrityError);
  Bundle other = b;
  other.fingerprint = "other";
  EXPECT_THROW(evaluate_run(other, run.stage1, run.stage2, 0, c.eval), IntegrityError);
}

TEST(Evaluate, PerfectOracleScoresZero) {
  const auto c = toy_config();
  const auto g = build_dataset(c);
  const Bundle b{g.data, g.config, c.dgp.seed, "fp"};
  const auto run = train_run(b, 0, c.train);
  auto oracle = [&](const std::vector<std::size_t>& nodes) {
    std::vector<double> tau;
    for (auto i : nodes) tau.push_back(b.data.Y1[i] - b.data.Y0[i]);
    return tau;
  };
  const auto ev = evaluate_run(b, run.stage1, run.stage2, 0, c.eval, oracle);
  EXPECT_EQ(ev.metrics.pehe_within, 0.0);
  EXPECT_EQ(ev.metrics.pehe_out, 0.0);
  EXPECT_EQ(ev.metrics.ate_out, 0.0);
  EXPECT_EQ(ev.within.size() + ev.out.size(), b.data.n());
  std::vector<bool> seen(b.data.n(), false);
  for (auto* set : {&ev.within, &ev.out})
    for (auto i : *set) {
      EXPECT_FALSE(seen[i]);
      seen[i] = true;
    }
}

TEST(Evaluate, HeldOutR2ModeRuns) {
  auto c = toy_config();
  c.eval.r2_mode = R2Mode::HeldOut;
  const auto g = build_dataset(c);
  const Bundle b{g.data, g.config, c.dgp.seed, "fp"};
  const auto run = train_run(b, 0, c.train);
  const auto ev = evaluate_run(b, run.stage1, run.stage2, 0, c.eval);
  EXPECT_LE(ev.r2.z_Z.mean, 1.0);
  EXPECT_GE(ev.r2.z_Z.clipped(), 0.0);
}

TEST(Config, ParsesNestedSectionsWithDefaults) {
  const auto c = config_from_json(json::parse(R"({
    "dgp": {"n_nodes": 50, "w_C": 0.0, "split_ratios": [0.5, 0.25, 0.25]},
    "train": {"beta": 0.5, "ablation": "no_conditional_decoder", "gcn_activation": "tanh"},
    "eval": {"r2_mode": "held_out"},
    "sweep": {"w_U": [0.0, 2.0], "ablations": ["full", "no_ortho"]}
  })"));
  EXPECT_EQ(c.dgp.n_nodes, 50u);
  EXPECT_EQ(c.dgp.w_C, 0.0);
  EXPECT_EQ(c.dgp.K, DGPConfig{}.K);
  EXPECT_EQ(c.train.beta, 0.5);
  EXPECT_EQ(c.train.ablation, Ablation::NoConditionalDecoder);
  EXPECT_EQ(c.train.gcn_activation, Activation::Tanh);
  EXPECT_EQ(c.eval.r2_mode, R2Mode::HeldOut);
  EXPECT_EQ(c.sweep.w_U, (std::vector<double>{0.0, 2.0}));
  EXPECT_EQ(c.sweep.ablations.size(), 2u);
}

TEST(Config, RoundTripsThroughJson) {
  const auto c = toy_config();
  const json j = to_json(c);
  EXPECT_EQ(to_json(config_from_json(j)).dump(), j.dump());
}

TEST(Config, RejectsUnknownFieldsAndBadTypes) {
  for (const char* text : {R"({"dgp": {"n_node": 5}})", R"({"train": {"beta": "high"}})",
                           R"({"extra": 1})", R"({"train": {"ablation": "none"}})",
                           R"({"dgp": {"K": 7}})", R"({"sweep": {"w_C": []}})"}) {
    EXPECT_THROW(config_from_json(json::parse(text)), ConfigError) << text;
  }
}

TEST(Config, MissingFileIsIoErrorAndBadJsonIsParseError) {
  const auto dir = scratch_dir("config");
  EXPECT_THROW(load_config(dir / "absent.json"), IoError);
  write_file(dir / "bad.json", "{ not json");
  EXPECT_THROW(load_config(dir / "bad.json"), ParseError);
}

TEST(Report, SweepOutputValidatesAndIsDeterministic) {
  const auto c = toy_config();
  const auto dir_a = scratch_dir("sweep_a"), dir_b = scratch_dir("sweep_b");
  const auto a = cmd_sweep(c, dir_a);
  const auto b = cmd_sweep(c, dir_b);
  EXPECT_EQ(a.failures, 0u);
  EXPECT_NO_THROW(validate_report(a.report));
  EXPECT_EQ(a.aggregate_csv, b.aggregate_csv);
  EXPECT_EQ(read_file(dir_a / kAggregateFile), read_file(dir_b / kAggregateFile));
  EXPECT_EQ(read_file(dir_a / kReportFile), read_file(dir_b / kReportFile));
  EXPECT_EQ(a.report.at("runs").size(), 2u * 2u * 2u);
  EXPECT_EQ(a.report.at("config_fingerprint").at("seeds"), json::array({0, 1}));
}

TEST(Report, ValidatorRejectsMalformedReports) {
  json good = make_report(toy_config(), json{{"sha256", "x"}, {"seeds", json::array()}},
                          json::array(), {});
  EXPECT_NO_THROW(validate_report(good));
  json bad = good;
  bad["schema_version"] = 99;
  EXPECT_THROW(validate_report(bad), ParseError);
  bad = good;
  bad["runs"] = json::array({json{{"status", "ok"}, {"method", "full"}, {"setting", "s"}, {"split", 0}}});
  EXPECT_THROW(validate_report(bad), ParseError);
  bad = good;
  bad.erase("aggregates");
  EXPECT_THROW(validate_report(bad), ParseError);
}

TEST(Report, AggregateCsvLayout) {
  const std::vector<RunMetrics> runs{{"full", "0.5-0.5", 0, 1.0, 0.1, 2.0, 0.2},
                                     {"full", "0.5-0.5", 1, 3.0, 0.3, 4.0, 0.4}};
  const std::string csv = aggregate_csv(aggregate_all(runs));
  EXPECT_EQ(csv,
            "method,metric,0.5-0.5/within,0.5-0.5/out\n"
            "full,pehe,2.0000±1.4142,3.0000±1.4142\n"
            "full,ate,0.2000±0.1414,0.3000±0.1414\n");
}

TEST(Sweep, SettingsKeepOrderedPairs) {
  SweepConfig s;
  s.w_C = {0.5, 1.0};
  s.w_U = {0.5, 1.0};
  const auto pairs = sweep_settings(s);
  ASSERT_EQ(pairs.size(), 3u);
  EXPECT_EQ(setting_label(pairs[0].first, pairs[0].second), "0.5-0.5");
  EXPECT_EQ(setting_label(pairs[1].first, pairs[1].second), "0.5-1.0");
  EXPECT_EQ(setting_label(pairs[2].first, pairs[2].second), "1.0-1.0");
  s.w_C = {2.0};
  s.w_U = {1.0};
  EXPECT_THROW(sweep_settings(s), ConfigError);
}

TEST(TrainingLogCsv, StageTwoLeavesComponentsEmpty) {
  EpochRecord s1{1, 1, 1.5, 0.7, 2.0, 0.1, 0.69, 0.69};
  EpochRecord s2;
  s2.stage = 2;
  s2.epoch = 1;
  s2.total = 0.25;
  s2.val = 0.5;
  s2.best_val = 0.5;
  EXPECT_EQ(log_to_csv({s1, s2}),
            "stage,epoch,total,treat,elbo,ortho,val,best_val\n"
            "1,1,1.5,0.7,2,0.1,0.69,0.69\n"
            "2,1,0.25,,,,0.5,0.5\n");
}
