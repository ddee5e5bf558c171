#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "disiv/datagen.hpp"
#include "disiv/io.hpp"
#include "disiv/model.hpp"

namespace disiv {

enum class R2Mode { InSample, HeldOut };

struct EvalConfig {
  R2Mode r2_mode = R2Mode::InSample;
};

struct SweepConfig {
  std::vector<double> w_C{0.5, 1.0};
  std::vector<double> w_U{0.5, 1.0};
  std::vector<Ablation> ablations{Ablation::Full};
};

struct ExperimentConfig {
  DGPConfig dgp;
  TrainConfig train;
  EvalConfig eval;
  SweepConfig sweep;
  std::string out_dir = "out";
  /// External graph; replaces the synthetic one when set.
  std::optional<std::string> edge_list;
  /// External N x K feature matrix CSV; replaces the synthetic features.
  std::optional<std::string> features;

  void validate() const {
    dgp.validate();
    train.validate();
    if (sweep.w_C.empty() || sweep.w_U.empty()) throw ConfigError("sweep.w_C and sweep.w_U must be nonempty");
    if (sweep.ablations.empty()) throw ConfigError("sweep.ablations must be nonempty");
  }
};

inline json to_json(const TrainConfig& c) {
  return json{{"beta", c.beta},
              {"lambda", c.lambda},
              {"lr_stage1", c.lr_stage1},
              {"lr_stage2", c.lr_stage2},
              {"weight_decay", c.weight_decay},
              {"max_epochs_stage1", c.max_epochs_stage1},
              {"max_epochs_stage2", c.max_epochs_stage2},
              {"patience", c.patience},
              {"hidden", c.hidden},
              {"d_z", c.d_z},
              {"gcn_layers", c.gcn_layers},
              {"gcn_activation", to_string(c.gcn_activation)},
              {"ablation", to_string(c.ablation)},
              {"treatment_input", to_string(c.treatment_input)},
              {"feature_scaling", to_string(c.feature_scaling)},
              {"seed", c.seed}};
}

namespace detail {

/// Reads the keys of one config section, rejecting unknown ones.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + " must be an object");
  }
  void mark(const char* key) { seen_.insert(key); }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key) + " has the wrong type (" + j_.at(key).dump() + ")");
    }
  }

  template <class T, class Parse>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string s;
    if (!j_.contains(key)) {
      seen_.insert(key);
      return;
    }
    get(key, s);
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config field " + field(it.key().c_str()));
    }
  }

  std::string field(const char* key) const { return name_ + "." + key; }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline DGPConfig dgp_from_json(const json& j) {
  DGPConfig c;
  detail::Section s(j, "dgp");
  s.get("K", c.K);
  s.get("d_z", c.d_z);
  s.get("w_X", c.w_X);
  s.get("w_IV", c.w_IV);
  s.get("w_C", c.w_C);
  s.get("w_U", c.w_U);
  s.get("random_weights", c.random_weights);
  s.get("beta_T", c.beta_T);
  s.get("noise_std", c.noise_std);
  s.get("n_repeats", c.n_repeats);
  s.get("split_ratios", c.split_ratios);
  s.get("seed", c.seed);
  s.get("standardize_logit", c.standardize_logit);
  s.get("n_nodes", c.n_nodes);
  s.get("avg_degree", c.avg_degree);
  s.get("topic_concentration", c.topic_concentration);
  s.finish();
  return c;
}

inline TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  detail::Section s(j, "train");
  s.get("beta", c.beta);
  s.get("lambda", c.lambda);
  s.get("lr_stage1", c.lr_stage1);
  s.get("lr_stage2", c.lr_stage2);
  s.get("weight_decay", c.weight_decay);
  s.get("max_epochs_stage1", c.max_epochs_stage1);
  s.get("max_epochs_stage2", c.max_epochs_stage2);
  s.get("patience", c.patience);
  s.get("hidden", c.hidden);
  s.get("d_z", c.d_z);
  s.get("gcn_layers", c.gcn_layers);
  s.get_enum("gcn_activation", c.gcn_activation, parse_activation);
  s.get_enum("ablation", c.ablation, parse_ablation);
  s.get_enum("treatment_input", c.treatment_input, parse_treatment_input);
  s.get_enum("feature_scaling", c.feature_scaling, parse_feature_scaling);
  s.get("seed", c.seed);
  s.finish();
  return c;
}

inline R2Mode parse_r2_mode(const std::string& s) {
  if (s == "in_sample") return R2Mode::InSample;
  if (s == "held_out") return R2Mode::HeldOut;
  throw ConfigError("unknown r2_mode '" + s + "'");
}

inline const char* to_string(R2Mode m) { return m == R2Mode::InSample ? "in_sample" : "held_out"; }

inline json to_json(const ExperimentConfig& c) {
  json ablations = json::array();
  for (auto a : c.sweep.ablations) ablations.push_back(to_string(a));
  json j{{"dgp", to_json(c.dgp)},
         {"train", to_json(c.train)},
         {"eval", {{"r2_mode", to_string(c.eval.r2_mode)}}},
         {"sweep", {{"w_C", c.sweep.w_C}, {"w_U", c.sweep.w_U}, {"ablations", ablations}}},
         {"out_dir", c.out_dir}};
  if (c.edge_list) j["edge_list"] = *c.edge_list;
  if (c.features) j["features"] = *c.features;
  return j;
}

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  detail::Section top(j, "config");
  const json empty = json::object();
  auto section = [&](const char* key) -> const json& {
    top.mark(key);
    return j.contains(key) ? j.at(key) : empty;
  };
  c.dgp = dgp_from_json(section("dgp"));
  c.train = train_from_json(section("train"));
  {
    detail::Section s(section("eval"), "eval");
    s.get_enum("r2_mode", c.eval.r2_mode, parse_r2_mode);
    s.finish();
  }
  {
    const json& w = section("sweep");
    detail::Section s(w, "sweep");
    s.get("w_C", c.sweep.w_C);
    s.get("w_U", c.sweep.w_U);
    std::vector<std::string> names;
    s.get("ablations", names);
    if (w.contains("ablations")) {
      c.sweep.ablations.clear();
      for (const auto& n : names) {
        try {
          c.sweep.ablations.push_back(parse_ablation(n));
        } catch (const ConfigError& e) {
          throw ConfigError(std::string("sweep.ablations: ") + e.what());
        }
      }
    }
    s.finish();
  }
  top.get("out_dir", c.out_dir);
  std::string path;
  if (j.contains("edge_list")) {
    top.get("edge_list", path);
    c.edge_list = path;
  }
  if (j.contains("features")) {
    top.get("features", path);
    c.features = path;
  }
  top.finish();
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  return config_from_json(parse_json(read_file(path), path.string()));
}

}  // namespace disiv
