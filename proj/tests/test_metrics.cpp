#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "disiv/metrics.hpp"
#include "disiv/rng.hpp"

using namespace disiv;

namespace {

Tensor gaussian(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::Init);
  return standard_normal(r, c, rng);
}

}  // namespace

TEST(Pehe, HandCase) {
  const std::vector<double> est{2.0, 1.0}, truth{1.0, 3.0};
  EXPECT_DOUBLE_EQ(pehe(est, truth), std::sqrt(2.5));
}

TEST(Pehe, ZeroForPerfectEstimate) {
  const std::vector<double> v{0.3, -1.2, 4.0};
  EXPECT_EQ(pehe(v, v), 0.0);
}

TEST(AteError, HandCase) {
  const std::vector<double> est{2.0, 1.0}, truth{1.0, 3.0};
  EXPECT_DOUBLE_EQ(ate_error(est, truth), 0.5);
}

TEST(AteError, CancellingErrorsVanish) {
  const std::vector<double> est{2.0, 0.0}, truth{1.0, 1.0};
  EXPECT_EQ(ate_error(est, truth), 0.0);
  EXPECT_DOUBLE_EQ(pehe(est, truth), 1.0);
}

TEST(EffectMetrics, RejectMismatchedOrEmptyInput) {
  const std::vector<double> a{1.0, 2.0}, b{1.0}, none;
  EXPECT_THROW(pehe(a, b), ContractError);
  EXPECT_THROW(ate_error(a, b), ContractError);
  EXPECT_THROW(pehe(none, none), ContractError);
}

TEST(MeanStd, HandCases) {
  const auto m = mean_std(std::vector<double>{1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_DOUBLE_EQ(m.std, std::sqrt(5.0 / 3.0));
  EXPECT_EQ(m.count, 4u);
  const auto one = mean_std(std::vector<double>{7.0});
  EXPECT_EQ(one.mean, 7.0);
  EXPECT_EQ(one.std, 0.0);
  EXPECT_THROW(mean_std(std::vector<double>{}), ContractError);
}

TEST(Aggregate, RowsPerMetricAndRegime) {
  std::vector<RunMetrics> runs{{"full", "0.5-0.5", 0, 1.0, 0.2, 2.0, 0.4},
                               {"full", "0.5-0.5", 1, 3.0, 0.4, 4.0, 0.8}};
  const auto rows = aggregate_runs(runs);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].metric, "pehe");
  EXPECT_EQ(rows[0].regime, "within");
  EXPECT_DOUBLE_EQ(rows[0].stats.mean, 2.0);
  EXPECT_DOUBLE_EQ(rows[0].stats.std, std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(rows[1].stats.mean, 3.0);
  EXPECT_EQ(rows[3].metric, "ate");
  EXPECT_EQ(rows[3].regime, "out");
  EXPECT_DOUBLE_EQ(rows[3].stats.mean, 0.6000000000000001);
}

TEST(Aggregate, IndependentOfRunOrder) {
  std::vector<RunMetrics> runs;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (std::size_t i = 0; i < 7; ++i) runs.push_back({"full", "s", i, u(rng), u(rng), u(rng), u(rng)});
  const auto a = aggregate_runs(runs);
  std::reverse(runs.begin(), runs.end());
  const auto b = aggregate_runs(runs);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].stats.mean, b[k].stats.mean);
    EXPECT_EQ(a[k].stats.std, b[k].stats.std);
  }
}

TEST(Aggregate, RejectsMixedCells) {
  std::vector<RunMetrics> runs{{"full", "a", 0, 1, 1, 1, 1}, {"no_ortho", "a", 0, 1, 1, 1, 1}};
  EXPECT_THROW(aggregate_runs(runs), ContractError);
}

TEST(R2, ExactLinearTargetScoresOne) {
  const Tensor z = gaussian(50, 3, 1);
  Tensor y(50, 2);
  for (std::size_t i = 0; i < 50; ++i) {
    y(i, 0) = 2.0 * z(i, 0) - z(i, 2) + 0.5;
    y(i, 1) = -3.0 * z(i, 1);
  }
  const auto r = r2_alignment(z, y);
  EXPECT_NEAR(r.mean, 1.0, 1e-12);
  EXPECT_TRUE(r.skipped.empty());
}

TEST(R2, InvariantToAffineMapsOfLatent) {
  const Tensor z = gaussian(80, 3, 2);
  const Tensor y = gaussian(80, 2, 3);
  Tensor z2(80, 3);
  for (std::size_t i = 0; i < 80; ++i) {
    z2(i, 0) = 3.0 * z(i, 0) + z(i, 1) - 4.0;
    z2(i, 1) = -z(i, 1) + 0.5 * z(i, 2);
    z2(i, 2) = 2.0 * z(i, 2) + 7.0;
  }
  EXPECT_NEAR(r2_alignment(z, y).mean, r2_alignment(z2, y).mean, 1e-9);
}

TEST(R2, InvariantToAffineMapsOfTarget) {
  const Tensor z = gaussian(80, 2, 4);
  Tensor y = gaussian(80, 1, 5);
  for (std::size_t i = 0; i < 80; ++i) y[i] += 0.8 * z(i, 0);
  Tensor y2 = y;
  for (double& v : y2.values()) v = -5.0 * v + 11.0;
  EXPECT_NEAR(r2_alignment(z, y).mean, r2_alignment(z, y2).mean, 1e-9);
}

TEST(R2, ConstantLatentScoresZero) {
  const Tensor y = gaussian(40, 2, 6);
  const auto r = r2_alignment(Tensor(40, 3, 1.5), y);
  EXPECT_NEAR(r.mean, 0.0, 1e-9);
}

TEST(R2, IndependentNoiseIsNearZero) {
  const auto r = r2_alignment(gaussian(5000, 2, 7), gaussian(5000, 2, 8));
  EXPECT_GE(r.mean, 0.0);
  EXPECT_LT(r.mean, 0.01);
}

TEST(R2, ConstantTargetColumnIsSkipped) {
  const Tensor z = gaussian(30, 2, 9);
  Tensor y(30, 2, 4.0);
  for (std::size_t i = 0; i < 30; ++i) y(i, 1) = z(i, 0);
  const auto r = r2_alignment(z, y);
  ASSERT_EQ(r.skipped, std::vector<std::size_t>{0});
  EXPECT_NEAR(r.mean, 1.0, 1e-12);
  EXPECT_TRUE(std::isnan(r.per_column[0]));
}

TEST(R2, DuplicatedLatentColumnsUseRidgeFallback) {
  const Tensor base = gaussian(60, 1, 10);
  Tensor z(60, 2);
  Tensor y(60, 1);
  for (std::size_t i = 0; i < 60; ++i) {
    z(i, 0) = z(i, 1) = base[i];
    y[i] = 2.0 * base[i];
  }
  EXPECT_NEAR(r2_alignment(z, y).mean, 1.0, 1e-9);
}

TEST(R2, HeldOutCanBeNegativeAndClips) {
  const Tensor zf = gaussian(20, 4, 11), yf = gaussian(20, 1, 12);
  const Tensor ze = gaussian(200, 4, 13), ye = gaussian(200, 1, 14);
  const auto r = r2_alignment_heldout(zf, yf, ze, ye);
  EXPECT_LT(r.mean, 0.0);
  EXPECT_EQ(r.clipped(), 0.0);
}

TEST(R2, TooFewRowsIsContractError) {
  EXPECT_THROW(r2_alignment(gaussian(3, 2, 1), gaussian(3, 1, 2)), ContractError);
  EXPECT_THROW(r2_alignment(gaussian(10, 2, 1), gaussian(9, 1, 2)), ContractError);
}
