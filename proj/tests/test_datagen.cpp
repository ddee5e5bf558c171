#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "disiv/datagen.hpp"

using namespace disiv;

namespace {

DGPConfig small_config(std::uint64_t seed = 0) {
  DGPConfig c;
  c.n_nodes = 300;
  c.seed = seed;
  return c;
}

Latents latents_of(const SyntheticDataset& ds) { return {ds.X_raw, ds.Z_true, ds.C_net, ds.U}; }

double correlation(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(Dgp, ExclusionPermutingZLeavesOutcomeBitwise) {
  const DGPConfig cfg = small_config(3);
  const auto ds = generate_dataset(cfg);
  Latents lat = latents_of(ds);
  const auto w = make_weights(cfg);
  const auto base = gen_outcomes(ds.t, lat, w, cfg);

  std::vector<std::size_t> perm(ds.n());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::reverse(perm.begin(), perm.end());
  Tensor z = lat.Z_true;
  for (std::size_t i = 0; i < ds.n(); ++i)
    for (std::size_t c = 0; c < z.cols(); ++c) z(i, c) = lat.Z_true(perm[i], c);
  lat.Z_true = z;
  const auto permuted = gen_outcomes(ds.t, lat, w, cfg);
  for (std::size_t i = 0; i < ds.n(); ++i) {
    EXPECT_EQ(base.y[i], permuted.y[i]);
    EXPECT_EQ(base.y[i], ds.y[i]);
  }
}

TEST(Dgp, ConsistencyIdentityIsExact) {
  const auto ds = generate_dataset(small_config(1));
  for (std::size_t i = 0; i < ds.n(); ++i) {
    const double t = ds.t[i];
    ASSERT_TRUE(t == 0.0 || t == 1.0);
    EXPECT_EQ(ds.y[i], t * ds.Y1[i] + (1.0 - t) * ds.Y0[i]);
  }
}

TEST(Dgp, ConstantIndividualEffect) {
  DGPConfig cfg = small_config(2);
  for (double beta : {1.0, -0.75, 2.5}) {
    cfg.beta_T = beta;
    const auto ds = generate_dataset(cfg);
    for (std::size_t i = 0; i < ds.n(); ++i) {
      EXPECT_EQ(ds.Y1[i], ds.Y0[i] + beta);
      EXPECT_NEAR(ds.Y1[i] - ds.Y0[i], beta, 4.0 * std::numeric_limits<double>::epsilon() *
                                                  std::max(1.0, std::abs(ds.Y0[i])));
    }
  }
}

TEST(Dgp, OverlapAllPropensitiesInsideUnitInterval) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    DGPConfig cfg = small_config(seed);
    cfg.n_nodes = 1000;
    const auto ds = generate_dataset(cfg);
    for (double p : ds.propensity.values()) {
      EXPECT_GT(p, 0.0);
      EXPECT_LT(p, 1.0);
    }
  }
}

TEST(Dgp, RelevanceOfInstrument) {
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    DGPConfig cfg;
    cfg.n_nodes = 1000;
    cfg.seed = seed;
    const auto ds = generate_dataset(cfg);
    const auto w = make_weights(cfg);
    const Tensor score = kernels::matmul(ds.Z_true, w.w_IV);
    total += correlation(score.values(), ds.t.values());
  }
  EXPECT_GT(total / 5.0, 0.1);
}

TEST(Dgp, LatentsFollowTheirDefinitions) {
  const DGPConfig cfg = small_config(4);
  const auto ds = generate_dataset(cfg);
  const std::size_t h = cfg.K / 2, dz = cfg.latent_dim();
  const Tensor proj = make_projection(h, dz, cfg.seed);
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (std::size_t c = 0; c < dz; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < h; ++k) s += ds.X_raw(i, k) * proj(k, c);
      EXPECT_NEAR(ds.Z_true(i, c), std::tanh(s), 1e-14);
    }
    for (std::size_t c = 0; c < h; ++c) {
      double s = 0.0;
      for (std::size_t j : ds.graph.neighbors(i)) s += ds.X_raw(j, h + c);
      EXPECT_NEAR(ds.C_net(i, c), s, 1e-14);
    }
  }
}

TEST(Dgp, ZeroConfoundingRemovesConfounders) {
  DGPConfig cfg = small_config(5);
  cfg.w_C = 0.0;
  cfg.w_U = 0.0;
  cfg.w_X = 0.0;
  cfg.noise_std = 0.0;
  const auto ds = generate_dataset(cfg);
  for (std::size_t i = 0; i < ds.n(); ++i) {
    EXPECT_EQ(ds.Y0[i], 0.0);
    EXPECT_EQ(ds.y[i], cfg.beta_T * ds.t[i]);
  }
}

TEST(Dgp, FeaturesAreTopicMixtures) {
  const auto ds = generate_dataset(small_config(6));
  for (std::size_t i = 0; i < ds.n(); ++i) {
    double s = 0.0;
    for (double v : ds.X_raw.row(i)) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Dgp, SameSeedIsBitwiseReproducible) {
  const auto a = generate_dataset(small_config(7));
  const auto b = generate_dataset(small_config(7));
  EXPECT_EQ(a.graph, b.graph);
  for (std::size_t i = 0; i < a.n(); ++i) {
    EXPECT_EQ(a.y[i], b.y[i]);
    EXPECT_EQ(a.t[i], b.t[i]);
  }
  EXPECT_EQ(a.splits, b.splits);
}

TEST(Dgp, ConfoundingWeightsDoNotShiftOtherStreams) {
  DGPConfig cfg = small_config(8);
  const auto a = generate_dataset(cfg);
  cfg.w_C = 1.0;
  cfg.w_U = 1.0;
  const auto b = generate_dataset(cfg);
  EXPECT_EQ(a.graph, b.graph);
  for (std::size_t k = 0; k < a.Z_true.size(); ++k) EXPECT_EQ(a.Z_true[k], b.Z_true[k]);
  for (std::size_t k = 0; k < a.U.size(); ++k) EXPECT_EQ(a.U[k], b.U[k]);
}

TEST(Dgp, SplitsPartitionNodes) {
  DGPConfig cfg = small_config(9);
  cfg.n_nodes = 101;
  const auto ds = generate_dataset(cfg);
  ASSERT_EQ(ds.splits.size(), cfg.n_repeats);
  const auto sizes = split_sizes(101, cfg.split_ratios);
  EXPECT_EQ(sizes[0] + sizes[1] + sizes[2], 101u);
  for (std::size_t r = 0; r < cfg.n_repeats; ++r) {
    const auto tr = nodes_in(ds, r, {SplitLabel::Train});
    const auto va = nodes_in(ds, r, {SplitLabel::Val});
    const auto te = nodes_in(ds, r, {SplitLabel::Test});
    EXPECT_EQ(tr.size(), sizes[0]);
    EXPECT_EQ(va.size(), sizes[1]);
    EXPECT_EQ(te.size(), sizes[2]);
    std::vector<std::size_t> all;
    for (const auto* v : {&tr, &va, &te}) all.insert(all.end(), v->begin(), v->end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
  }
  EXPECT_NE(ds.splits[0], ds.splits[1]);
}

TEST(Dgp, SplitSizesHandCases) {
  EXPECT_EQ(split_sizes(10, {0.6, 0.2, 0.2}), (std::array<std::size_t, 3>{6, 2, 2}));
  EXPECT_EQ(split_sizes(7, {0.6, 0.2, 0.2}), (std::array<std::size_t, 3>{4, 2, 1}));
}

TEST(Dgp, ExternalGraphAndFeatures) {
  DGPConfig cfg = small_config(10);
  cfg.K = 4;
  const SparseGraph g(6, {{0, 1}, {1, 2}, {3, 4}});
  Tensor x(6, 4, 0.25);
  const auto ds = generate_dataset(cfg, g, x);
  EXPECT_EQ(ds.n(), 6u);
  EXPECT_EQ(ds.graph, g);
  EXPECT_EQ(ds.C_net(5, 0), 0.0);
  EXPECT_THROW(generate_dataset(cfg, g, Tensor(5, 4)), ConfigError);
}

TEST(Dgp, InvalidConfigsAreRejected) {
  DGPConfig c = small_config();
  c.K = 7;
  EXPECT_THROW(generate_dataset(c), ConfigError);
  c = small_config();
  c.split_ratios = {0.5, 0.5, 0.5};
  EXPECT_THROW(generate_dataset(c), ConfigError);
  c = small_config();
  c.noise_std = -1.0;
  EXPECT_THROW(generate_dataset(c), ConfigError);
}

TEST(Dgp, SaturatedLogitsViolateOverlap) {
  Tensor logit(100, 1, 800.0);
  EXPECT_THROW(treatment_from_logits(logit, 0), ConfigError);
  logit[0] = 800.0;
  for (std::size_t i = 1; i < 100; ++i) logit[i] = 0.0;
  const auto d = treatment_from_logits(logit, 0);
  EXPECT_LT(d.propensity[0], 1.0);
}
