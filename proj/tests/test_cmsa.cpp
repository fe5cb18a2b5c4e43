#include <gtest/gtest.h>

#include <cmath>

#include "affordsplat/cmsa/cmsa.hpp"
#include "affordsplat/datagen/generator.hpp"
#include "testutil.hpp"

using namespace affordsplat;
using namespace affordsplat::cmsa;
using core::ParameterStore;
using core::Rng;
using core::Tape;
using core::Tensor;
using core::Var;

namespace {

affordnet::ModelConfig cmsa_cfg() {
  affordnet::ModelConfig c;
  c.d = 32;
  c.d_text = 16;
  c.heads = 4;
  c.granularity_sizes = {16, 8, 4};
  c.text.d_text = 16;
  c.text.heads = 4;
  c.d_consis = 12;
  c.cmsa_width = 8;
  c.cmsa_tokens = 24;
  c.cmsa_heads = 2;
  return c;
}

struct CmsaFixture {
  ParameterStore<double> ps;
  CmsaModule<double> mod;
  explicit CmsaFixture(std::uint64_t seed = 1) {
    Rng rng(seed);
    mod.init(ps, cmsa_cfg(), rng);
  }
};

TEST(Ste, ThresholdForwardIdentityBackward) {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>({3}, {0.2, 0.5, 0.9}));
  auto m = ste_select(t, x);
  EXPECT_FALSE(m.fallback);
  EXPECT_EQ(m.values.val()[0], 0.0);
  EXPECT_EQ(m.values.val()[1], 1.0);
  EXPECT_EQ(m.values.val()[2], 1.0);
  EXPECT_EQ(m.selected, (std::vector<std::int64_t>{1, 2}));
  auto c = t.constant(Tensor<double>({3}, {2, 3, 5}));
  t.backward(sum_all(mul(m.values, c)));
  EXPECT_EQ(t.grad(x)[0], 2.0);
  EXPECT_EQ(t.grad(x)[1], 3.0);
  EXPECT_EQ(t.grad(x)[2], 5.0);
}

TEST(Ste, EmptyRegionFallsBackToUniform) {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>({4}, {0.1, 0.2, 0.3, 0.4}));
  auto m = ste_select(t, x);
  EXPECT_TRUE(m.fallback);
  EXPECT_EQ(m.selected.size(), 4u);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(m.values.val()[i], 0.5);
  auto c = t.constant(Tensor<double>({4}, {1, 1, 1, 1}));
  t.backward(sum_all(mul(m.values, c)));
  for (int i = 0; i < 4; ++i) EXPECT_EQ(t.grad(x)[i], 1.0);
}

TEST(Ste, SurrogateCompositionMatchesFiniteDifferences) {
  // The relaxed graph (scores pass through, selection frozen) must match
  // central differences through masked_region_rows and a smooth readout.
  Rng rng(2);
  auto scores0 = testutil::random_tensor({6}, rng, 0.2, 0.9);
  auto rows = testutil::random_tensor({6, 4}, rng);
  auto res = testutil::check_gradient(
      scores0,
      [&](Tape<double>& t, Var<double> s) {
        auto m = ste_select(t, s, /*relaxed=*/true);
        auto region = masked_region_rows(t, t.constant(rows), m);
        return sum_all(mul(region, region));
      },
      1e-5);
  EXPECT_LT(res.max_rel_err, 1e-6) << res.worst;
}

TEST(EncodeRegion, FullMaskMatchesFullObject) {
  CmsaFixture f;
  Rng rng(3);
  auto rows_t = testutil::random_tensor({10, 10}, rng);
  Tensor<float> pos({10, 3});
  for (std::int64_t i = 0; i < pos.numel(); ++i) pos[i] = (float)rng.uniform(-1, 1);
  Tape<double> t;
  auto scores = t.leaf(Tensor<double>::full({10}, 0.9));
  auto m = ste_select(t, scores);
  ASSERT_EQ(m.selected.size(), 10u);
  auto region = masked_region_rows(t, t.constant(rows_t), m);
  auto f_aff = f.mod.encode_tokens(t, region, pos, true);
  auto f_full = f.mod.encode_tokens(t, t.constant(rows_t), pos, true);
  ASSERT_EQ(f_aff.val().numel(), f_full.val().numel());
  for (std::int64_t i = 0; i < f_aff.val().numel(); ++i)
    EXPECT_NEAR(f_aff.val()[i], f_full.val()[i], 1e-12);
}

TEST(EncodeRegion, SingleRowRegion) {
  CmsaFixture f;
  Rng rng(4);
  auto rows_t = testutil::random_tensor({8, 10}, rng);
  Tensor<float> pos({8, 3});
  for (std::int64_t i = 0; i < pos.numel(); ++i) pos[i] = (float)rng.uniform(-1, 1);
  Tape<double> t;
  Tensor<double> s({8});
  s[3] = 0.8;
  auto m = ste_select(t, t.leaf(s));
  ASSERT_EQ(m.selected, (std::vector<std::int64_t>{3}));
  auto region = masked_region_rows(t, t.constant(rows_t), m);
  auto tokens = f.mod.encode_tokens(t, region, pos, true);
  EXPECT_EQ(tokens.val().dim(0), 1);
  EXPECT_EQ(tokens.val().dim(1), 8);  // cmsa width
}

TEST(EncodeRegion, PooledEncodingPermutationInvariant) {
  CmsaFixture f;
  Rng rng(5);
  const std::int64_t N = 30;
  auto rows_t = testutil::random_tensor({N, 10}, rng);
  Tensor<float> pos({N, 3});
  for (std::int64_t i = 0; i < pos.numel(); ++i) pos[i] = (float)rng.uniform(-1, 1);

  auto z_of = [&](const std::vector<std::int64_t>& order) {
    Tensor<double> rows_p({N, 10});
    Tensor<float> pos_p({N, 3});
    for (std::int64_t i = 0; i < N; ++i) {
      for (int j = 0; j < 10; ++j)
        rows_p.at(i, j) = rows_t.at(order[(std::size_t)i], j);
      for (int j = 0; j < 3; ++j)
        pos_p.at(i, j) = pos.at(order[(std::size_t)i], j);
    }
    Tape<double> t;
    auto full = f.mod.encode_tokens(t, t.constant(rows_p), pos_p, true);
    // region: half of the rows (same set under permutation)
    std::vector<std::int64_t> region_rows;
    for (std::int64_t i = 0; i < N; ++i)
      if (order[(std::size_t)i] < N / 2) region_rows.push_back(i);
    auto region = take_rows(t.constant(rows_p), region_rows);
    Tensor<float> region_pos({(std::int64_t)region_rows.size(), 3});
    for (std::size_t i = 0; i < region_rows.size(); ++i)
      for (int j = 0; j < 3; ++j)
        region_pos.at((std::int64_t)i, j) = pos_p.at(region_rows[i], j);
    auto f_aff = f.mod.encode_tokens(t, region, region_pos, true);
    auto z = f.mod.structural_affinity(t, f_aff, full);
    std::vector<double> out;
    for (std::int64_t i = 0; i < z.val().numel(); ++i) out.push_back(z.val()[i]);
    return out;
  };

  std::vector<std::int64_t> identity(N);
  for (std::int64_t i = 0; i < N; ++i) identity[(std::size_t)i] = i;
  auto base = z_of(identity);
  Rng perm_rng(6);
  for (int rep = 0; rep < 10; ++rep) {
    auto order = identity;
    perm_rng.shuffle(order);
    auto z = z_of(order);
    for (std::size_t j = 0; j < base.size(); ++j)
      EXPECT_NEAR(z[j], base[j], 1e-6) << "rep " << rep;
  }
}

TEST(StructuralAffinity, DegenerateKeysAndUnitNorm) {
  CmsaFixture f;
  Rng rng(7);
  Tape<double> t;
  // all full-object tokens equal -> attention output independent of queries
  Tensor<double> vrow = testutil::random_tensor({8}, rng);
  Tensor<double> full({5, 8});
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 8; ++j) full.at(i, j) = vrow[j];
  auto q1 = t.constant(testutil::random_tensor({3, 8}, rng));
  auto q2 = t.constant(testutil::random_tensor({4, 8}, rng));
  auto z1 = f.mod.structural_affinity(t, q1, t.constant(full));
  auto z2 = f.mod.structural_affinity(t, q2, t.constant(full));
  for (std::int64_t j = 0; j < z1.val().numel(); ++j)
    EXPECT_NEAR(z1.val()[j], z2.val()[j], 1e-9);
  // unit norm
  double norm = 0;
  for (std::int64_t j = 0; j < z1.val().numel(); ++j)
    norm += z1.val()[j] * z1.val()[j];
  EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-6);
}

TEST(StructuralAffinity, HandComputedSingleHead) {
  affordnet::ModelConfig cfg = cmsa_cfg();
  cfg.cmsa_width = 2;
  cfg.cmsa_heads = 1;
  cfg.d_consis = 2;
  ParameterStore<double> ps;
  CmsaModule<double> mod;
  Rng rng(8);
  mod.init(ps, cfg, rng);
  ps.get("cmsa.shared.attn.wq.W").value = Tensor<double>({2, 2}, {1, 0, 0, 1});
  ps.get("cmsa.shared.attn.wk.W").value = Tensor<double>({2, 2}, {1, 0, 0, 1});
  ps.get("cmsa.shared.attn.wv.W").value = Tensor<double>({2, 2}, {1, 0, 0, 1});
  ps.get("cmsa.shared.attn.wo.W").value = Tensor<double>({2, 2}, {1, 0, 0, 1});
  ps.get("cmsa.shared.ffn1.W").value = Tensor<double>({2, 2}, {1, 0, 0, 1});
  ps.get("cmsa.shared.ffn1.b").value.fill(0);
  ps.get("cmsa.shared.ffn2.W").value = Tensor<double>({2, 2}, {3, 0, 0, 3});
  ps.get("cmsa.shared.ffn2.b").value.fill(0);
  Tape<double> t;
  auto f_aff = t.constant(Tensor<double>({1, 2}, {1.0, -0.5}));
  auto f_full = t.constant(Tensor<double>({2, 2}, {0.3, 0.7, -0.2, 0.4}));
  auto z = mod.structural_affinity(t, f_aff, f_full);
  const double s0 = (1.0 * 0.3 - 0.5 * 0.7) / std::sqrt(2.0);
  const double s1 = (1.0 * -0.2 - 0.5 * 0.4) / std::sqrt(2.0);
  const double e0 = std::exp(s0), e1 = std::exp(s1);
  const double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
  double v0 = a0 * 0.3 + a1 * -0.2;
  double v1 = a0 * 0.7 + a1 * 0.4;
  auto gelu_ref = [](double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
  };
  const double f0 = 3.0 * gelu_ref(v0), f1 = 3.0 * gelu_ref(v1);
  const double nrm = std::sqrt(f0 * f0 + f1 * f1 + 1e-12);
  EXPECT_NEAR(z.val()[0], f0 / nrm, 1e-12);
  EXPECT_NEAR(z.val()[1], f1 / nrm, 1e-12);
}

TEST(ConsistencyWeights, ClosedFormsAndOracle) {
  EXPECT_THROW(consistency_weights_from_distances({1.0}, 0.0), ArgumentError);
  auto single = consistency_weights_from_distances({0.37}, 0.1);
  ASSERT_EQ(single.w.size(), 1u);
  EXPECT_DOUBLE_EQ(single.w[0], 1.0);
  auto equal = consistency_weights_from_distances({0.8, 0.8}, 0.5);
  EXPECT_DOUBLE_EQ(equal.w[0], 0.5);
  EXPECT_DOUBLE_EQ(equal.w[1], 0.5);

  Rng rng(9);
  std::vector<double> d{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2)};
  auto cw = consistency_weights_from_distances(d, 0.1);
  double sum = 0;
  std::vector<double> expect(3);
  for (int k = 0; k < 3; ++k) {
    expect[(std::size_t)k] = std::exp(-d[(std::size_t)k] / 0.1);
    sum += expect[(std::size_t)k];
  }
  for (int k = 0; k < 3; ++k)
    EXPECT_NEAR(cw.w[(std::size_t)k], expect[(std::size_t)k] / sum, 1e-9);
}

TEST(ConsistencyWeights, OrderingInverseToDistance) {
  for (double tau : {0.01, 0.1, 1.0}) {
    auto cw = consistency_weights_from_distances({0.5, 0.2, 0.9, 0.2001}, tau);
    double sum = 0;
    for (double w : cw.w) {
      EXPECT_GE(w, 0.0);
      sum += w;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
    EXPECT_GT(cw.w[1], cw.w[3]);
    EXPECT_GT(cw.w[3], cw.w[0]);
    EXPECT_GT(cw.w[0], cw.w[2]);
  }
  // weight concentration grows monotonically as tau shrinks
  double prev_top = 0;
  for (double tau : {1.0, 0.1, 0.01}) {
    auto cw = consistency_weights_from_distances({0.5, 0.2, 0.9}, tau);
    EXPECT_GT(cw.w[1], prev_top);
    prev_top = cw.w[1];
  }
}

TEST(ConsistencyLoss, ClosedFormsAndScalarOracle) {
  Tape<double> t;
  Tensor<double> z({3}, {1, 0, 0});
  auto zg = t.constant(z);
  // identical embeddings -> 0
  ConsistencyWeights w1;
  w1.w = {0.25, 0.75};
  auto l0 = consistency_loss<double>(t, zg, {t.constant(z), t.constant(z)}, w1);
  EXPECT_NEAR(l0.val()[0], 0.0, 1e-12);
  // orthogonal single -> 1
  ConsistencyWeights w2;
  w2.w = {1.0};
  auto l1 = consistency_loss<double>(
      t, zg, {t.constant(Tensor<double>({3}, {0, 1, 0}))}, w2);
  EXPECT_NEAR(l1.val()[0], 1.0, 1e-12);

  // K=4 random unit vectors vs scalar oracle
  Rng rng(10);
  auto unit = [&](Rng& r) {
    std::vector<double> v(5);
    double n = 0;
    for (auto& x : v) {
      x = r.normal();
      n += x * x;
    }
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    return v;
  };
  auto zgs = unit(rng);
  std::vector<std::vector<double>> zpcs;
  for (int k = 0; k < 4; ++k) zpcs.push_back(unit(rng));
  ConsistencyWeights cw = consistency_weights_from_distances(
      {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)},
      0.3);
  Tape<double> t2;
  std::vector<Var<double>> zv;
  for (const auto& zp : zpcs)
    zv.push_back(t2.constant(Tensor<double>({5}, std::vector<double>(zp))));
  auto lg = consistency_loss<double>(
      t2, t2.constant(Tensor<double>({5}, std::vector<double>(zgs))), zv, cw);
  EXPECT_NEAR(lg.val()[0], consistency_loss_scalar(zgs, zpcs, cw), 1e-9);
  // bounds
  EXPECT_GE(lg.val()[0], 0.0);
  EXPECT_LE(lg.val()[0], 2.0);
}

}  // namespace
