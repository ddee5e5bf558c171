// Command-line front end: generate, train, evaluate, sweep, gradcheck.
//
// Exit status: 0 ok, 1 internal/contract error, 2 bad config or arguments,
// 3 I/O failure, 4 integrity mismatch, 5 numeric failure, 6 gradcheck failed.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "disiv/disiv.hpp"

namespace {

constexpr int kGradcheckFailed = 6;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t split = 0;
  std::vector<std::string> ablation;
  std::string edge_list;
  std::string bundle;
  std::string checkpoint;
};

disiv::ExperimentConfig load(const Options& o) {
  disiv::ExperimentConfig c = o.config.empty() ? disiv::ExperimentConfig{}
                                               : disiv::load_config(o.config);
  if (!o.edge_list.empty()) c.edge_list = o.edge_list;
  if (!o.ablation.empty()) {
    c.sweep.ablations.clear();
    for (const auto& a : o.ablation) c.sweep.ablations.push_back(disiv::parse_ablation(a));
    c.train.ablation = c.sweep.ablations.front();
  }
  c.validate();
  return c;
}

std::string out_dir(const Options& o, const disiv::ExperimentConfig& c) {
  return o.out.empty() ? c.out_dir : o.out;
}

int run_generate(const Options& o) {
  auto c = load(o);
  if (o.seed) c.dgp.seed = *o.seed;
  const auto dir = out_dir(o, c);
  const auto fp = disiv::cmd_generate(c, dir);
  std::cout << "bundle " << dir << " fingerprint " << fp << "\n";
  return 0;
}

int run_train(const Options& o) {
  auto c = load(o);
  if (o.seed) c.train.seed = *o.seed;
  const auto dir = out_dir(o, c);
  const auto run = disiv::cmd_train(o.bundle, c.train, o.split, dir);
  std::size_t s1 = 0, s2 = 0;
  for (const auto& r : run.log) (r.stage == 1 ? s1 : s2)++;
  std::cout << "trained " << disiv::to_string(c.train.ablation) << " on split " << o.split
            << " (" << s1 << " + " << s2 << " epochs) -> " << dir << "\n";
  return 0;
}

int run_evaluate(const Options& o) {
  const auto c = load(o);
  const auto dir = out_dir(o, c);
  const auto ev = disiv::cmd_evaluate(c, o.bundle, o.checkpoint, o.split, dir);
  const auto& m = ev.metrics;
  std::printf("sqrt_pehe within %.4f out %.4f\n", m.pehe_within, m.pehe_out);
  std::printf("eps_ate   within %.4f out %.4f\n", m.ate_within, m.ate_out);
  std::printf("r2 z~Z %.3f z~C %.3f e~Z %.3f e~C %.3f\n", ev.r2.z_Z.clipped(), ev.r2.z_C.clipped(),
              ev.r2.e_Z.clipped(), ev.r2.e_C.clipped());
  return 0;
}

int run_sweep(const Options& o) {
  auto c = load(o);
  if (o.seed) {
    c.dgp.seed = *o.seed;
    c.train.seed = *o.seed;
  }
  const auto dir = out_dir(o, c);
  const auto res = disiv::cmd_sweep(c, dir);
  std::cout << res.aggregate_csv;
  if (res.failures > 0) std::cerr << res.failures << " run(s) failed; see report.json\n";
  return 0;
}

int run_gradcheck(const Options& o) {
  bool ok = true;
  for (const auto& l : disiv::run_gradcheck_suite(o.seed.value_or(0))) {
    std::printf("%-40s %-6s max_rel_err %.3e (%zu coords)\n", l.component.c_str(),
                l.exempt ? "EXEMPT" : (l.passed() ? "PASS" : "FAIL"), l.max_rel_error,
                l.coordinates);
    ok = ok && l.passed();
  }
  return ok ? 0 : kGradcheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disentangled instrumental-variable effect estimation on networks"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config with dgp/train/eval/sweep sections")
        ->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "Output directory");
  };
  auto seed = [&](CLI::App* sub) { sub->add_option("--seed", o.seed, "Seed override"); };

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset bundle");
  common(gen);
  seed(gen);
  gen->add_option("--edge-list", o.edge_list, "Use this graph instead of a synthetic one")
      ->check(CLI::ExistingFile);

  auto* train = app.add_subcommand("train", "Train both stages on one split of a bundle");
  common(train);
  seed(train);
  train->add_option("--bundle", o.bundle, "Dataset bundle directory")->required();
  train->add_option("--split", o.split, "Split index");
  train->add_option("--ablation", o.ablation, "full | no_conditional_decoder | no_ortho")
      ->expected(1);

  auto* eval = app.add_subcommand("evaluate", "Score trained checkpoints on a bundle split");
  common(eval);
  eval->add_option("--bundle", o.bundle, "Dataset bundle directory")->required();
  eval->add_option("--checkpoint", o.checkpoint, "Directory with stage1.json and stage2.json")
      ->required();
  eval->add_option("--split", o.split, "Split index");

  auto* sweep = app.add_subcommand("sweep", "Generate, train and evaluate over the sweep grid");
  common(sweep);
  seed(sweep);
  sweep->add_option("--ablation", o.ablation, "Ablations to run (repeatable)");
  sweep->add_option("--edge-list", o.edge_list, "Use this graph instead of a synthetic one")
      ->check(CLI::ExistingFile);

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  seed(grad);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) return run_generate(o);
    if (*train) return run_train(o);
    if (*eval) return run_evaluate(o);
    if (*sweep) return run_sweep(o);
    return run_gradcheck(o);
  } catch (const disiv::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
