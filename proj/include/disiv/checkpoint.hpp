#pragma once

#include <string>

#include "disiv/config.hpp"
#include "disiv/io.hpp"
#include "disiv/train.hpp"

namespace disiv {

inline constexpr int kCheckpointVersion = 1;

/// Which bundle and split a trained model belongs to.
struct Provenance {
  std::string dataset_fingerprint;
  std::size_t split = 0;
  TrainConfig train;
};

struct Stage1Checkpoint {
  Stage1Params params;
  Provenance from;
};

struct Stage2Checkpoint {
  OutcomeModel model;
  Provenance from;
};

namespace detail {

inline json checkpoint_header(int stage, const Provenance& p, std::size_t input_dim) {
  return json{{"format", "disiv-checkpoint"},
              {"version", kCheckpointVersion},
              {"stage", stage},
              {"seed", p.train.seed},
              {"split", p.split},
              {"dataset_fingerprint", p.dataset_fingerprint},
              {"train_config", to_json(p.train)},
              {"input_dim", input_dim}};
}

inline json standardizer_json(const Standardizer& s) {
  return json{{"shift", s.shift}, {"scale", s.scale}};
}

inline Standardizer standardizer_from(const json& j) {
  return {j.at("shift").get<double>(), j.at("scale").get<double>()};
}

/// Parses and checks the common header; returns the provenance and input dim.
inline std::pair<Provenance, std::size_t> read_header(const json& j, int stage,
                                                      const std::string& what) {
  if (j.value("format", "") != "disiv-checkpoint") throw IntegrityError(what + ": not a checkpoint");
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw IntegrityError(what + ": unsupported checkpoint version " + j.at("version").dump());
  }
  if (j.at("stage").get<int>() != stage) {
    throw IntegrityError(what + ": expected a stage-" + std::to_string(stage) + " checkpoint");
  }
  Provenance p;
  p.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
  p.split = j.at("split").get<std::size_t>();
  try {
    p.train = train_from_json(j.at("train_config"));
  } catch (const ConfigError& e) {
    throw IntegrityError(what + ": " + e.what());
  }
  return {p, j.at("input_dim").get<std::size_t>()};
}

template <class F>
auto guarded(const std::string& what, F f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw IntegrityError(what + ": " + e.what());
  }
}

}  // namespace detail

inline std::string checkpoint_text(const Stage1Checkpoint& c) {
  json j = detail::checkpoint_header(1, c.from, c.params.input_dim);
  j["parameters"] = params_to_json(c.params.params);
  return j.dump(1) + "\n";
}

inline std::string checkpoint_text(const Stage2Checkpoint& c) {
  json j = detail::checkpoint_header(2, c.from, c.model.params.input_dim);
  j["t_input"] = detail::standardizer_json(c.model.t_input);
  j["y"] = detail::standardizer_json(c.model.y);
  j["parameters"] = params_to_json(c.model.params.params);
  return j.dump(1) + "\n";
}

inline Stage1Checkpoint stage1_from_text(const std::string& text, const std::string& what) {
  const json j = parse_json(text, what);
  return detail::guarded(what, [&] {
    auto [p, dim] = detail::read_header(j, 1, what);
    return Stage1Checkpoint{{dim, params_from_json(j.at("parameters"))}, p};
  });
}

inline Stage2Checkpoint stage2_from_text(const std::string& text, const std::string& what) {
  const json j = parse_json(text, what);
  return detail::guarded(what, [&] {
    auto [p, dim] = detail::read_header(j, 2, what);
    OutcomeModel m{{dim, params_from_json(j.at("parameters"))},
                   detail::standardizer_from(j.at("t_input")),
                   detail::standardizer_from(j.at("y"))};
    return Stage2Checkpoint{std::move(m), p};
  });
}

inline void save_checkpoint(const fs::path& path, const Stage1Checkpoint& c) {
  write_file(path, checkpoint_text(c));
}
inline void save_checkpoint(const fs::path& path, const Stage2Checkpoint& c) {
  write_file(path, checkpoint_text(c));
}
inline Stage1Checkpoint load_stage1(const fs::path& path) {
  return stage1_from_text(read_file(path), path.string());
}
inline Stage2Checkpoint load_stage2(const fs::path& path) {
  return stage2_from_text(read_file(path), path.string());
}

}  // namespace disiv
