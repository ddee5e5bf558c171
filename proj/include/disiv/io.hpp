#pragma once

#include <openssl/evp.h>

#include <json.hpp>

#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "disiv/datagen.hpp"
#include "disiv/errors.hpp"
#include "disiv/graph.hpp"
#include "disiv/tensor.hpp"

namespace disiv {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Bytes and hashes

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading " + path.string());
  return ss.str();
}

inline void write_file(const fs::path& path, std::string_view bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

/// Lower-case hex SHA-256 of `bytes`.
inline std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256: digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 0xf];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Numeric CSV

/// Shortest text that parses back to exactly `v`.
inline std::string format_double(double v) {
  if (!std::isfinite(v)) throw NumericError("cannot serialize non-finite value");
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw NumericError("to_chars failed");
  return std::string(buf.data(), end);
}

inline double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw ParseError(where + ": '" + std::string(s) + "' is not a number");
  }
  return v;
}

/// One line per row, comma separated, no header.
inline std::string matrix_to_csv(const Tensor& m) {
  std::string out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += format_double(m(r, c));
    }
    out += '\n';
  }
  return out;
}

inline Tensor matrix_from_csv(std::string_view text, const std::string& name) {
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    ++rows;
    std::size_t n = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const auto cell = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
      values.push_back(parse_double(cell, name + " line " + std::to_string(rows)));
      ++n;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (rows == 1) cols = n;
    if (n != cols) {
      throw ParseError(name + " line " + std::to_string(rows) + ": expected " +
                       std::to_string(cols) + " columns, found " + std::to_string(n));
    }
  }
  if (rows == 0) throw ParseError(name + ": no rows");
  return Tensor(rows, cols, std::move(values));
}

// ---------------------------------------------------------------------------
// Dataset bundle

inline constexpr int kBundleVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kEdgesName = "edges.csv";

inline json to_json(const DGPConfig& c) {
  return json{{"K", c.K},
              {"d_z", c.latent_dim()},
              {"w_X", c.w_X},
              {"w_IV", c.w_IV},
              {"w_C", c.w_C},
              {"w_U", c.w_U},
              {"random_weights", c.random_weights},
              {"beta_T", c.beta_T},
              {"noise_std", c.noise_std},
              {"n_repeats", c.n_repeats},
              {"split_ratios", c.split_ratios},
              {"seed", c.seed},
              {"standardize_logit", c.standardize_logit},
              {"n_nodes", c.n_nodes},
              {"avg_degree", c.avg_degree},
              {"topic_concentration", c.topic_concentration}};
}

namespace detail {

inline const std::array<std::pair<const char*, Tensor SyntheticDataset::*>, 9>& bundle_matrices() {
  static const std::array<std::pair<const char*, Tensor SyntheticDataset::*>, 9> m{{
      {"X.csv", &SyntheticDataset::X_raw},
      {"Z_true.csv", &SyntheticDataset::Z_true},
      {"C_net.csv", &SyntheticDataset::C_net},
      {"U.csv", &SyntheticDataset::U},
      {"t.csv", &SyntheticDataset::t},
      {"y.csv", &SyntheticDataset::y},
      {"Y0.csv", &SyntheticDataset::Y0},
      {"Y1.csv", &SyntheticDataset::Y1},
      {"propensity.csv", &SyntheticDataset::propensity},
  }};
  return m;
}

inline std::string split_name(std::size_t r) { return "split_" + std::to_string(r) + ".csv"; }

inline std::string splits_to_csv(const std::vector<SplitLabel>& s) {
  std::string out;
  out.reserve(2 * s.size());
  for (SplitLabel l : s) {
    out += static_cast<char>('0' + static_cast<int>(l));
    out += '\n';
  }
  return out;
}

inline std::vector<SplitLabel> splits_from_csv(const std::string& text, const std::string& name) {
  std::vector<SplitLabel> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line == "0" || line == "1" || line == "2") {
      out.push_back(static_cast<SplitLabel>(line[0] - '0'));
    } else {
      throw ParseError(name + " line " + std::to_string(n) + ": split label must be 0, 1 or 2");
    }
  }
  return out;
}

}  // namespace detail

/// File name -> bytes of a bundle, manifest last. `config` is echoed into
/// the manifest verbatim.
inline std::vector<std::pair<std::string, std::string>> bundle_files(const SyntheticDataset& ds,
                                                                     const json& config,
                                                                     std::uint64_t seed) {
  std::vector<std::pair<std::string, std::string>> files;
  {
    std::ostringstream e;
    write_edge_list(e, ds.graph);
    files.emplace_back(kEdgesName, e.str());
  }
  for (const auto& [name, member] : detail::bundle_matrices()) {
    files.emplace_back(name, matrix_to_csv(ds.*member));
  }
  for (std::size_t r = 0; r < ds.splits.size(); ++r) {
    files.emplace_back(detail::split_name(r), detail::splits_to_csv(ds.splits[r]));
  }
  json checksums = json::object();
  for (const auto& [name, bytes] : files) checksums[name] = sha256_hex(bytes);
  json manifest{{"format", "disiv-bundle"},
                {"version", kBundleVersion},
                {"n_nodes", ds.n()},
                {"n_edges", ds.graph.n_edges()},
                {"K", ds.X_raw.cols()},
                {"d_z", ds.Z_true.cols()},
                {"n_repeats", ds.splits.size()},
                {"seed", seed},
                {"config", config},
                {"files", checksums}};
  files.emplace_back(kManifestName, manifest.dump(2) + "\n");
  return files;
}

struct Bundle {
  SyntheticDataset data;
  /// The generator config echoed in the manifest.
  json config;
  std::uint64_t seed = 0;
  /// SHA-256 of the manifest bytes; identifies the bundle contents.
  std::string fingerprint;
};

/// Writes every bundle file and returns the manifest fingerprint.
inline std::string save_bundle(const fs::path& dir, const SyntheticDataset& ds, const json& config,
                               std::uint64_t seed) {
  std::string fingerprint;
  for (const auto& [name, bytes] : bundle_files(ds, config, seed)) {
    write_file(dir / name, bytes);
    if (name == kManifestName) fingerprint = sha256_hex(bytes);
  }
  return fingerprint;
}

inline std::string save_bundle(const fs::path& dir, const SyntheticDataset& ds,
                               const DGPConfig& cfg) {
  return save_bundle(dir, ds, to_json(cfg), cfg.seed);
}

inline std::string save_bundle(const fs::path& dir, const Bundle& b) {
  return save_bundle(dir, b.data, b.config, b.seed);
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(what + ": " + e.what());
  }
}

/// Loads and verifies a bundle; any checksum or shape disagreement with the
/// manifest raises IntegrityError.
inline Bundle load_bundle(const fs::path& dir) {
  const std::string manifest_bytes = read_file(dir / kManifestName);
  const json m = parse_json(manifest_bytes, kManifestName);
  Bundle b;
  b.fingerprint = sha256_hex(manifest_bytes);
  try {
    if (m.at("format") != "disiv-bundle") throw IntegrityError("manifest: not a disiv bundle");
    if (m.at("version").get<int>() != kBundleVersion) {
      throw IntegrityError("manifest: unsupported bundle version " + m.at("version").dump());
    }
    const auto& files = m.at("files");
    auto verified = [&](const std::string& name) {
      if (!files.contains(name)) throw IntegrityError("manifest: no checksum for " + name);
      std::string bytes = read_file(dir / name);
      if (sha256_hex(bytes) != files.at(name).get<std::string>()) {
        throw IntegrityError("checksum mismatch for " + name);
      }
      return bytes;
    };
    const auto n = m.at("n_nodes").get<std::size_t>();
    const auto k = m.at("K").get<std::size_t>();
    const auto dz = m.at("d_z").get<std::size_t>();
    const auto repeats = m.at("n_repeats").get<std::size_t>();
    b.config = m.at("config");
    b.seed = m.at("seed").get<std::uint64_t>();

    auto& ds = b.data;
    {
      std::istringstream in(verified(kEdgesName));
      ds.graph = load_edge_list(in, n);
    }
    if (ds.graph.n_edges() != m.at("n_edges").get<std::size_t>()) {
      throw IntegrityError("edge count disagrees with manifest");
    }
    for (const auto& [name, member] : detail::bundle_matrices()) {
      ds.*member = matrix_from_csv(verified(name), name);
    }
    auto expect = [&](const Tensor& t, std::size_t cols, const char* name) {
      if (t.rows() != n || t.cols() != cols) {
        throw IntegrityError(std::string(name) + " has shape " + t.shape_string() +
                             ", manifest implies " + std::to_string(n) + "x" +
                             std::to_string(cols));
      }
    };
    expect(ds.X_raw, k, "X.csv");
    expect(ds.Z_true, dz, "Z_true.csv");
    expect(ds.C_net, k / 2, "C_net.csv");
    for (const char* name : {"U.csv", "t.csv", "y.csv", "Y0.csv", "Y1.csv", "propensity.csv"}) {
      for (const auto& [fname, member] : detail::bundle_matrices()) {
        if (std::string_view(fname) == name) expect(ds.*member, 1, name);
      }
    }
    for (std::size_t r = 0; r < repeats; ++r) {
      const auto name = detail::split_name(r);
      ds.splits.push_back(detail::splits_from_csv(verified(name), name));
      if (ds.splits.back().size() != n) throw IntegrityError(name + ": wrong number of rows");
    }
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("manifest: ") + e.what());
  }
  return b;
}

// ---------------------------------------------------------------------------
// Parameter tensors as JSON

inline json params_to_json(const ParameterList& params) {
  json arr = json::array();
  for (const auto& p : params) {
    json values = json::array();
    for (double v : p.value.values()) {
      if (!std::isfinite(v)) throw NumericError("parameter " + p.name + " is not finite");
      values.push_back(v);
    }
    arr.push_back(json{{"name", p.name},
                       {"rows", p.value.rows()},
                       {"cols", p.value.cols()},
                       {"values", std::move(values)}});
  }
  return arr;
}

inline ParameterList params_from_json(const json& arr) {
  ParameterList out;
  for (const auto& p : arr) {
    const auto rows = p.at("rows").get<std::size_t>();
    const auto cols = p.at("cols").get<std::size_t>();
    auto values = p.at("values").get<std::vector<double>>();
    if (values.size() != rows * cols) {
      throw IntegrityError("parameter " + p.at("name").get<std::string>() + ": " +
                           std::to_string(values.size()) + " values for shape " +
                           std::to_string(rows) + "x" + std::to_string(cols));
    }
    out.push_back({p.at("name").get<std::string>(), Tensor(rows, cols, std::move(values))});
  }
  return out;
}

}  // namespace disiv
