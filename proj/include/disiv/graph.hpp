#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "disiv/autodiff.hpp"
#include "disiv/errors.hpp"
#include "disiv/tensor.hpp"

namespace disiv {

/// Undirected simple graph stored as sorted adjacency lists.
class SparseGraph {
 public:
  SparseGraph() = default;

  /// Builds from arbitrary pairs: symmetrizes, deduplicates, drops self-loops.
  SparseGraph(std::size_t n_nodes, const std::vector<std::pair<std::size_t, std::size_t>>& pairs)
      : adj_(n_nodes) {
    if (n_nodes == 0) throw ContractError("graph: n_nodes must be >= 1");
    for (auto [i, j] : pairs) {
      if (i >= n_nodes || j >= n_nodes) {
        throw ContractError("graph: edge (" + std::to_string(i) + "," + std::to_string(j) +
                            ") out of range for " + std::to_string(n_nodes) + " nodes");
      }
      if (i == j) continue;
      adj_[i].push_back(j);
      adj_[j].push_back(i);
    }
    for (auto& row : adj_) {
      std::sort(row.begin(), row.end());
      row.erase(std::unique(row.begin(), row.end()), row.end());
      n_edges_ += row.size();
    }
    n_edges_ /= 2;
  }

  std::size_t n_nodes() const noexcept { return adj_.size(); }
  std::size_t n_edges() const noexcept { return n_edges_; }
  std::size_t degree(std::size_t i) const { return adj_.at(i).size(); }
  const std::vector<std::size_t>& neighbors(std::size_t i) const { return adj_.at(i); }

  /// Each undirected edge once, as (i, j) with i < j, in lexicographic order.
  std::vector<std::pair<std::size_t, std::size_t>> edges() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    out.reserve(n_edges_);
    for (std::size_t i = 0; i < adj_.size(); ++i)
      for (std::size_t j : adj_[i])
        if (i < j) out.emplace_back(i, j);
    return out;
  }

  bool operator==(const SparseGraph&) const = default;

 private:
  std::vector<std::vector<std::size_t>> adj_;
  std::size_t n_edges_ = 0;
};

/// Parses a line-oriented edge list: two non-negative integer ids per line,
/// separated by a comma and/or whitespace. Blank lines and lines starting
/// with '#' or '%' are skipped. The node count is `n_nodes` when given,
/// otherwise max id + 1.
inline SparseGraph load_edge_list(std::istream& in, std::optional<std::size_t> n_nodes = {}) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::string line;
  std::size_t lineno = 0;
  std::size_t max_id = 0;
  bool any = false;

  auto parse_id = [&](std::string_view tok) -> std::size_t {
    if (!tok.empty() && tok.front() == '-') {
      throw ParseError("edge list line " + std::to_string(lineno) + ": negative node id '" +
                       std::string(tok) + "'");
    }
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size()) {
      throw ParseError("edge list line " + std::to_string(lineno) + ": invalid node id '" +
                       std::string(tok) + "'");
    }
    if (n_nodes && v >= *n_nodes) {
      throw ParseError("edge list line " + std::to_string(lineno) + ": node id " +
                       std::to_string(v) + " >= declared node count " +
                       std::to_string(*n_nodes));
    }
    return v;
  };

  while (std::getline(in, line)) {
    ++lineno;
    for (char& c : line)
      if (c == ',' || c == '\t' || c == '\r') c = ' ';
    std::vector<std::string_view> toks;
    std::string_view sv(line);
    while (!sv.empty()) {
      const auto b = sv.find_first_not_of(' ');
      if (b == std::string_view::npos) break;
      sv.remove_prefix(b);
      const auto e = sv.find(' ');
      toks.push_back(sv.substr(0, e));
      sv.remove_prefix(e == std::string_view::npos ? sv.size() : e);
    }
    if (toks.empty() || toks[0].front() == '#' || toks[0].front() == '%') continue;
    if (toks.size() != 2) {
      throw ParseError("edge list line " + std::to_string(lineno) + ": expected 2 ids, got " +
                       std::to_string(toks.size()));
    }
    const std::size_t i = parse_id(toks[0]);
    const std::size_t j = parse_id(toks[1]);
    max_id = std::max({max_id, i, j});
    any = true;
    pairs.emplace_back(i, j);
  }
  const std::size_t n = n_nodes ? *n_nodes : (any ? max_id + 1 : 0);
  if (n == 0) throw ParseError("edge list: empty file and no node count given");
  return SparseGraph(n, pairs);
}

/// One "i,j" line per undirected edge with i < j.
inline void write_edge_list(std::ostream& out, const SparseGraph& g) {
  for (auto [i, j] : g.edges()) out << i << ',' << j << '\n';
}

/// Row-compressed table of 1 / sqrt(d~_i d~_j) over j in N(i) plus i, where
/// d~ counts the self-loop. Immutable once built.
class NormalizedAdjacency {
 public:
  struct Entry {
    std::size_t col;
    double weight;
  };

  explicit NormalizedAdjacency(const SparseGraph& g) : row_ptr_(g.n_nodes() + 1, 0) {
    const std::size_t n = g.n_nodes();
    std::vector<double> inv_sqrt(n);
    for (std::size_t i = 0; i < n; ++i)
      inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(g.degree(i) + 1));
    entries_.reserve(2 * g.n_edges() + n);
    for (std::size_t i = 0; i < n; ++i) {
      bool self_done = false;
      for (std::size_t j : g.neighbors(i)) {
        if (!self_done && j > i) {
          entries_.push_back({i, inv_sqrt[i] * inv_sqrt[i]});
          self_done = true;
        }
        entries_.push_back({j, inv_sqrt[i] * inv_sqrt[j]});
      }
      if (!self_done) entries_.push_back({i, inv_sqrt[i] * inv_sqrt[i]});
      row_ptr_[i + 1] = entries_.size();
    }
  }

  std::size_t n_nodes() const noexcept { return row_ptr_.size() - 1; }
  std::span<const Entry> row(std::size_t i) const {
    return {entries_.data() + row_ptr_[i], row_ptr_[i + 1] - row_ptr_[i]};
  }
  std::size_t nnz() const noexcept { return entries_.size(); }

  /// Coefficient a_ij, zero when j is not in N(i) plus i.
  double coefficient(std::size_t i, std::size_t j) const {
    for (const auto& e : row(i))
      if (e.col == j) return e.weight;
    return 0.0;
  }

  /// out_i = sum_j a_ij x_j
  Tensor apply(const Tensor& x) const {
    if (x.rows() != n_nodes()) {
      throw DimensionError("aggregate: " + x.shape_string() + " rows vs " +
                           std::to_string(n_nodes()) + " nodes");
    }
    Tensor out(x.rows(), x.cols());
    const std::size_t c = x.cols();
    for (std::size_t i = 0; i < n_nodes(); ++i) {
      double* o = out.row(i).data();
      for (const auto& e : row(i)) {
        const double* xi = x.row(e.col).data();
        for (std::size_t k = 0; k < c; ++k) o[k] += e.weight * xi[k];
      }
    }
    return out;
  }

  /// out_j = sum_i a_ij g_i (the adjoint of apply()).
  Tensor apply_transpose(const Tensor& g) const {
    Tensor out(g.rows(), g.cols());
    const std::size_t c = g.cols();
    for (std::size_t i = 0; i < n_nodes(); ++i) {
      const double* gi = g.row(i).data();
      for (const auto& e : row(i)) {
        double* o = out.row(e.col).data();
        for (std::size_t k = 0; k < c; ++k) o[k] += e.weight * gi[k];
      }
    }
    return out;
  }

 private:
  std::vector<std::size_t> row_ptr_;
  std::vector<Entry> entries_;
};

inline NormalizedAdjacency normalize_adjacency(const SparseGraph& g) {
  return NormalizedAdjacency(g);
}

/// Differentiable symmetric-normalized aggregation. `adj` must outlive the
/// tape's backward pass.
inline Var aggregate(const NormalizedAdjacency& adj, Var x) {
  Tensor v = adj.apply(x.value());
  return x.tape->push(OpKind::Aggregate, {x}, std::move(v), [&adj](Tape& t, std::size_t self) {
    t.accumulate(t.node(self).inputs[0], adj.apply_transpose(t.grad_of(self)));
  });
}

/// One graph-convolution layer: row i is act(sum_j a_ij x_j W).
inline Var gcn_layer(const NormalizedAdjacency& adj, Var x, Var w, Activation act) {
  if (x.cols() != w.rows()) {
    throw ContractError("gcn_layer: features " + x.value().shape_string() + " vs weights " +
                        w.value().shape_string());
  }
  if (x.rows() != adj.n_nodes()) {
    throw ContractError("gcn_layer: " + std::to_string(x.rows()) + " feature rows for " +
                        std::to_string(adj.n_nodes()) + " nodes");
  }
  // Transform first when that shrinks the width being aggregated.
  Var h = w.cols() <= x.cols() ? aggregate(adj, matmul(x, w)) : matmul(aggregate(adj, x), w);
  return activate(h, act);
}

/// Unnormalized neighbour sum without a self term: row i is sum_{j in N(i)} x_j.
inline Tensor neighbor_sum(const SparseGraph& g, const Tensor& x) {
  if (x.rows() != g.n_nodes()) {
    throw ContractError("neighbor_sum: " + std::to_string(x.rows()) + " rows for " +
                        std::to_string(g.n_nodes()) + " nodes");
  }
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < g.n_nodes(); ++i) {
    auto o = out.row(i);
    for (std::size_t j : g.neighbors(i)) {
      auto xj = x.row(j);
      for (std::size_t k = 0; k < x.cols(); ++k) o[k] += xj[k];
    }
  }
  return out;
}

}  // namespace disiv
