#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "disiv/errors.hpp"
#include "disiv/tensor.hpp"

namespace disiv {

/// Root mean squared ITE error.
inline double pehe(std::span<const double> tau_hat, std::span<const double> tau) {
  if (tau.empty()) throw ContractError("pehe: empty node set");
  if (tau_hat.size() != tau.size()) throw ContractError("pehe: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < tau.size(); ++i) s += (tau_hat[i] - tau[i]) * (tau_hat[i] - tau[i]);
  return std::sqrt(s / static_cast<double>(tau.size()));
}

/// |mean(tau_hat) - mean(tau)|
inline double ate_error(std::span<const double> tau_hat, std::span<const double> tau) {
  if (tau.empty()) throw ContractError("ate_error: empty node set");
  if (tau_hat.size() != tau.size()) throw ContractError("ate_error: length mismatch");
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    a += tau_hat[i];
    b += tau[i];
  }
  return std::abs(a - b) / static_cast<double>(tau.size());
}

struct R2Result {
  /// Unweighted mean of per_column over non-skipped columns.
  double mean = 0.0;
  std::vector<double> per_column;
  /// Target columns with zero variance (no R^2 defined).
  std::vector<std::size_t> skipped;

  double clipped() const { return std::max(0.0, mean); }
};

inline constexpr double kRidgeFallback = 1e-6;

namespace detail {

using Mat = Eigen::MatrixXd;

inline Mat design(const Tensor& latent) {
  Mat d(latent.rows(), latent.cols() + 1);
  for (std::size_t r = 0; r < latent.rows(); ++r) {
    d(r, 0) = 1.0;
    for (std::size_t c = 0; c < latent.cols(); ++c) d(r, c + 1) = latent(r, c);
  }
  return d;
}

inline Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m(r, c) = t(r, c);
  return m;
}

/// OLS coefficients (intercept first); ridge on the slopes when the design is
/// rank deficient.
inline Mat least_squares(const Mat& x, const Mat& y) {
  Eigen::ColPivHouseholderQR<Mat> qr(x);
  if (qr.rank() == x.cols()) return qr.solve(y);
  Mat gram = x.transpose() * x;
  for (Eigen::Index k = 1; k < gram.rows(); ++k) gram(k, k) += kRidgeFallback;
  return gram.ldlt().solve(x.transpose() * y);
}

inline R2Result score(const Mat& pred, const Mat& y) {
  R2Result r;
  double total = 0.0;
  std::size_t used = 0;
  for (Eigen::Index c = 0; c < y.cols(); ++c) {
    const double mean = y.col(c).mean();
    const double sst = (y.col(c).array() - mean).square().sum();
    if (sst <= 0.0) {
      r.skipped.push_back(static_cast<std::size_t>(c));
      r.per_column.push_back(std::nan(""));
      continue;
    }
    const double sse = (y.col(c) - pred.col(c)).squaredNorm();
    const double v = 1.0 - sse / sst;
    r.per_column.push_back(v);
    total += v;
    ++used;
  }
  r.mean = used == 0 ? std::nan("") : total / static_cast<double>(used);
  return r;
}

}  // namespace detail

/// In-sample linear alignment: OLS with intercept from `latent` (N x p) to
/// each column of `target` (N x q), R^2 averaged over columns.
inline R2Result r2_alignment(const Tensor& latent, const Tensor& target) {
  if (latent.rows() != target.rows()) throw ContractError("r2_alignment: row counts differ");
  if (latent.rows() <= latent.cols() + 1) {
    throw ContractError("r2_alignment: need N > p + 1 (N=" + std::to_string(latent.rows()) +
                        ", p=" + std::to_string(latent.cols()) + ")");
  }
  const auto x = detail::design(latent);
  const auto y = detail::to_mat(target);
  const auto beta = detail::least_squares(x, y);
  return detail::score(x * beta, y);
}

/// Fits on one node set and scores on another; may be negative.
inline R2Result r2_alignment_heldout(const Tensor& latent_fit, const Tensor& target_fit,
                                     const Tensor& latent_eval, const Tensor& target_eval) {
  if (latent_fit.rows() <= latent_fit.cols() + 1) {
    throw ContractError("r2_alignment: need N > p + 1 on the fit set");
  }
  const auto beta =
      detail::least_squares(detail::design(latent_fit), detail::to_mat(target_fit));
  return detail::score(detail::design(latent_eval) * beta, detail::to_mat(target_eval));
}

/// Mean and sample (n - 1) standard deviation; std is 0 for a single value.
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

inline MeanStd mean_std(std::span<const double> v) {
  if (v.empty()) throw ContractError("mean_std: no values");
  MeanStd m;
  m.count = v.size();
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

/// Metrics of one trained run on one split.
struct RunMetrics {
  std::string method;
  std::string setting;
  std::size_t split = 0;
  double pehe_within = 0.0;
  double ate_within = 0.0;
  double pehe_out = 0.0;
  double ate_out = 0.0;
};

struct AggregateRow {
  std::string metric;  // "pehe" or "ate"
  std::string method;
  std::string setting;
  std::string regime;  // "within" or "out"
  MeanStd stats;
};

/// Mean and std over runs that share one (method, setting) cell. Rows come
/// out keyed by (metric, regime) in a fixed order.
inline std::vector<AggregateRow> aggregate_runs(std::span<const RunMetrics> runs) {
  if (runs.empty()) throw ContractError("aggregate_runs: no runs");
  for (const auto& r : runs) {
    if (r.method != runs[0].method || r.setting != runs[0].setting) {
      throw ContractError("aggregate_runs: runs mix settings (" + runs[0].method + "/" +
                          runs[0].setting + " vs " + r.method + "/" + r.setting + ")");
    }
  }
  auto collect = [&](double RunMetrics::*field) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.*field);
    // Sorting makes the summary independent of run order down to the bit.
    std::sort(v.begin(), v.end());
    return mean_std(v);
  };
  const auto& m = runs[0].method;
  const auto& s = runs[0].setting;
  return {
      {"pehe", m, s, "within", collect(&RunMetrics::pehe_within)},
      {"pehe", m, s, "out", collect(&RunMetrics::pehe_out)},
      {"ate", m, s, "within", collect(&RunMetrics::ate_within)},
      {"ate", m, s, "out", collect(&RunMetrics::ate_out)},
  };
}

}  // namespace disiv
