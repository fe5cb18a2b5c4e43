#include <gtest/gtest.h>

#include <cmath>

#include "affordsplat/core/params.hpp"
#include "affordsplat/core/rng.hpp"
#include "affordsplat/core/tape.hpp"
#include "affordsplat/core/tensor.hpp"
#include "affordsplat/nn/blocks.hpp"
#include "testutil.hpp"

using namespace affordsplat::core;
using affordsplat::ArgumentError;
using affordsplat::nn::causal_bias;
using affordsplat::nn::key_padding_bias;
using affordsplat::nn::LayerNorm;
using affordsplat::nn::Linear;
using affordsplat::nn::MultiHeadAttention;
using affordsplat::nn::TransformerEncoderLayer;
using testutil::check_gradient;
using testutil::random_tensor;

namespace {

TEST(Tensor, BroadcastShapes) {
  EXPECT_EQ(broadcast_shape({2, 3}, {3}), (Shape{2, 3}));
  EXPECT_EQ(broadcast_shape({2, 1, 4}, {2, 5, 4}), (Shape{2, 5, 4}));
  EXPECT_EQ(broadcast_shape({1}, {7}), (Shape{7}));
  EXPECT_THROW(broadcast_shape({2, 3}, {4}), ArgumentError);
}

TEST(Tape, AddBroadcastValues) {
  Tape<double> t;
  auto a = t.leaf(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}));
  auto b = t.leaf(Tensor<double>({3}, {10, 20, 30}));
  auto c = add(a, b);
  EXPECT_EQ(c.val().shape(), (Shape{2, 3}));
  EXPECT_DOUBLE_EQ(c.val()[0], 11);
  EXPECT_DOUBLE_EQ(c.val()[5], 36);
  auto loss = sum_all(c);
  t.backward(loss);
  // b's grad accumulates over the broadcast rows.
  EXPECT_DOUBLE_EQ(t.grad(b)[0], 2);
  EXPECT_DOUBLE_EQ(t.grad(a)[0], 1);
}

TEST(Tape, MatmulValue) {
  Tape<double> t;
  auto a = t.leaf(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}));
  auto b = t.leaf(Tensor<double>({3, 2}, {7, 8, 9, 10, 11, 12}));
  auto c = matmul(a, b);
  EXPECT_EQ(c.val().shape(), (Shape{2, 2}));
  EXPECT_DOUBLE_EQ(c.val().at(0, 0), 58);
  EXPECT_DOUBLE_EQ(c.val().at(0, 1), 64);
  EXPECT_DOUBLE_EQ(c.val().at(1, 0), 139);
  EXPECT_DOUBLE_EQ(c.val().at(1, 1), 154);
}

TEST(Tape, GradElementwise) {
  Rng rng(11);
  auto x0 = random_tensor({3, 4}, rng, 0.2, 2.0);
  auto res = check_gradient(x0, [](Tape<double>& t, Var<double> x) {
    auto y = mul(x, x);
    y = add(y, vexp(mul_scalar(x, 0.3)));
    y = sub(y, vlog(x));
    y = div(y, add_scalar(vsqrt(x), 1.0));
    return sum_all(y);
  });
  EXPECT_LT(res.max_rel_err, 1e-6) << res.worst;
}

TEST(Tape, GradBroadcastBinary) {
  Rng rng(12);
  auto x0 = random_tensor({2, 1, 3}, rng);
  auto other = random_tensor({2, 4, 3}, rng, 0.5, 1.5);
  auto res = check_gradient(x0, [&](Tape<double>& t, Var<double> x) {
    auto o = t.constant(other);
    return sum_all(mul(div(x, o), add(o, x)));
  });
  EXPECT_LT(res.max_rel_err, 1e-6) << res.worst;
}

TEST(Tape, GradActivations) {
  Rng rng(13);
  auto x0 = random_tensor({20}, rng, -2.0, 2.0);
  for (int which = 0; which < 4; ++which) {
    auto res = check_gradient(x0, [which](Tape<double>& t, Var<double> x) {
      Var<double> y;
      switch (which) {
        case 0: y = vtanh(x); break;
        case 1: y = sigmoid(x); break;
        case 2: y = gelu(x); break;
        default: y = mul(softmax_last(x), x); break;
      }
      return sum_all(mul(y, y));
    });
    EXPECT_LT(res.max_rel_err, 1e-6) << "act " << which << " " << res.worst;
  }
}

TEST(Tape, GradMatmulBatchedAndShared) {
  Rng rng(14);
  auto x0 = random_tensor({2, 3, 4}, rng);
  auto w = random_tensor({4, 5}, rng);
  auto other = random_tensor({2, 5, 3}, rng);
  auto res = check_gradient(x0, [&](Tape<double>& t, Var<double> x) {
    auto y = matmul(x, t.constant(w));       // [2,3,5] shared rhs
    auto z = matmul(y, t.constant(other));   // [2,3,3] batched rhs
    return sum_all(mul(z, z));
  });
  EXPECT_LT(res.max_rel_err, 1e-6) << res.worst;

  // rhs as the checked input
  auto res2 = check_gradient(w, [&](Tape<double>& t, Var<double> wv) {
    auto y = matmul(t.constant(x0), wv);
    return sum_all(mul(y, y));
  });
  EXPECT_LT(res2.max_rel_err, 1e-6) << res2.worst;
}

TEST(Tape, GradSoftmaxLogSoftmax) {
  Rng rng(15);
  auto x0 = random_tensor({3, 5}, rng, -2, 2);
  auto c = random_tensor({3, 5}, rng);
  auto res = check_gradient(x0, [&](Tape<double>& t, Var<double> x) {
    return sum_all(mul(softmax_last(x), t.constant(c)));
  });
  EXPECT_LT(res.max_rel_err, 1e-6) << res.worst;
  auto res2 = check_gradient(x0, [&](Tape<double>& t, Var<double> x) {
    return sum_all(mul(log_softmax_last(x), t.constant(c)));
  });
  EXPECT_LT(res2.max_rel_err, 1e-6) << res2.worst;
}

TEST(Tape, GradReductionsAndShapes) {
  Rng rng(16);
  auto x0 = random_tensor({2, 4, 3}, rng);
  auto res = check_gradient(x0, [](Tape<double>& t, Var<double> x) {
    auto a = sum_axis(x, 1, true);           // [2,1,3]
    auto b = mean_axis(x, -1);               // [2,4]
    auto c = expand_axis(a, 1, 4);           // [2,4,3]
    auto d = transpose_last2(c);             // [2,3,4]
    auto e = reshape(d, {2, 12});
    auto f = slice_axis(e, 1, 3, 6);
    return add(sum_all(mul(f, f)), sum_all(mul(b, b)));
  });
  EXPECT_LT(res.max_rel_err, 1e-6) << res.worst;
}

TEST(Tape, GradMaxAxis) {
  // Values spaced apart so the FD step cannot flip the argmax.
  Tensor<double> x0({2, 3}, {0.1, 0.9, 0.4, 0.8, 0.2, 0.5});
  auto res = check_gradient(x0, [](Tape<double>& t, Var<double> x) {
    auto m = max_axis(x, 1);
    return sum_all(mul(m, m));
  });
  EXPECT_LT(res.max_rel_err, 1e-6) << res.worst;
}

TEST(Tape, GradIndexing) {
  Rng rng(17);
  auto x0 = random_tensor({5, 3}, rng);
  auto res = check_gradient(x0, [](Tape<double>& t, Var<double> x) {
    auto rows = take_rows(x, {4, 0, 0, 2});
    auto el = take_last(rows, {1, 2, 0, 1});
    return sum_all(mul(el, el));
  });
  EXPECT_LT(res.max_rel_err, 1e-6) << res.worst;
}

TEST(Tape, GradConcatStack) {
  Rng rng(18);
  auto x0 = random_tensor({2, 3}, rng);
  auto y0 = random_tensor({2, 2}, rng);
  auto res = check_gradient(x0, [&](Tape<double>& t, Var<double> x) {
    auto y = t.constant(y0);
    auto c = concat<double>({x, y, x}, 1);  // [2,8]
    auto s = stack0<double>({c, c});        // [2,2,8]
    return sum_all(mul(s, s));
  });
  EXPECT_LT(res.max_rel_err, 1e-6) << res.worst;
}

TEST(Tape, GradLinearCombRows) {
  Rng rng(19);
  auto x0 = random_tensor({4, 3}, rng);
  Tensor<double> w({2, 2}, {0.25, 0.75, 0.5, 0.5});
  Tensor<std::int64_t> idx({2, 2}, {0, 3, 1, 1});
  auto res = check_gradient(x0, [&](Tape<double>& t, Var<double> x) {
    auto y = linear_comb_rows(x, w, idx);
    return sum_all(mul(y, y));
  });
  EXPECT_LT(res.max_rel_err, 1e-6) << res.worst;
}

TEST(Tape, StePassesGradientsThrough) {
  Tape<double> t;
  auto x = t.leaf(Tensor<double>({3}, {0.2, 0.5, 0.9}));
  auto c = t.constant(Tensor<double>({3}, {2.0, 3.0, 5.0}));
  auto y = ste_threshold(x);
  EXPECT_DOUBLE_EQ(y.val()[0], 0.0);
  EXPECT_DOUBLE_EQ(y.val()[1], 1.0);
  EXPECT_DOUBLE_EQ(y.val()[2], 1.0);
  t.backward(sum_all(mul(y, c)));
  EXPECT_DOUBLE_EQ(t.grad(x)[0], 2.0);
  EXPECT_DOUBLE_EQ(t.grad(x)[1], 3.0);
  EXPECT_DOUBLE_EQ(t.grad(x)[2], 5.0);
}

TEST(Tape, ParamGradAccumulatesAcrossUses) {
  ParameterStore<double> ps;
  auto& w = ps.add("w", Tensor<double>({2}, {1.5, -0.5}));
  Tape<double> t;
  auto wv = t.param(w);
  auto wv2 = t.param(w);  // same node
  EXPECT_EQ(wv.id, wv2.id);
  auto y = add(mul(wv, wv), wv2);  // w^2 + w -> dy/dw = 2w + 1
  t.backward(sum_all(y));
  EXPECT_DOUBLE_EQ(w.grad[0], 4.0);
  EXPECT_DOUBLE_EQ(w.grad[1], 0.0);
}

TEST(Blocks, LayerNormGrad) {
  Rng rng(20);
  ParameterStore<double> ps;
  LayerNorm<double> ln;
  ln.init(ps, "ln", 6);
  ps.get("ln.gamma").value = random_tensor({6}, rng, 0.5, 1.5);
  ps.get("ln.beta").value = random_tensor({6}, rng);
  auto x0 = random_tensor({2, 3, 6}, rng);
  auto c = random_tensor({2, 3, 6}, rng);
  auto res = check_gradient(x0, [&](Tape<double>& t, Var<double> x) {
    return sum_all(mul(ln(t, x), t.constant(c)));
  });
  EXPECT_LT(res.max_rel_err, 1e-5) << res.worst;
}

TEST(Blocks, AttentionMatchesHandComputedSingleHead) {
  // Single head, d=2, Lq=1, Lk=2; weights set by hand, computed with plain
  // scalar arithmetic below.
  ParameterStore<double> ps;
  Rng rng(1);
  MultiHeadAttention<double> mha;
  mha.init(ps, "mha", 1, 2, 2, 2, rng);
  // Identity projections except wo which doubles.
  ps.get("mha.wq.W").value = Tensor<double>({2, 2}, {1, 0, 0, 1});
  ps.get("mha.wk.W").value = Tensor<double>({2, 2}, {1, 0, 0, 1});
  ps.get("mha.wv.W").value = Tensor<double>({2, 2}, {1, 0, 0, 1});
  ps.get("mha.wo.W").value = Tensor<double>({2, 2}, {2, 0, 0, 2});

  Tape<double> t;
  auto q = t.leaf(Tensor<double>({1, 1, 2}, {1.0, -0.5}), false);
  auto kv = t.leaf(Tensor<double>({1, 2, 2}, {0.3, 0.7, -0.2, 0.4}), false);
  auto out = mha(t, q, kv);

  const double s0 = (1.0 * 0.3 + (-0.5) * 0.7) / std::sqrt(2.0);
  const double s1 = (1.0 * (-0.2) + (-0.5) * 0.4) / std::sqrt(2.0);
  const double m = std::max(s0, s1);
  const double e0 = std::exp(s0 - m), e1 = std::exp(s1 - m);
  const double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
  const double v0 = a0 * 0.3 + a1 * (-0.2);
  const double v1 = a0 * 0.7 + a1 * 0.4;
  EXPECT_NEAR(out.val()[0], 2.0 * v0, 1e-12);
  EXPECT_NEAR(out.val()[1], 2.0 * v1, 1e-12);
}

TEST(Blocks, AttentionKeyPaddingMasksKeys) {
  ParameterStore<double> ps;
  Rng rng(2);
  MultiHeadAttention<double> mha;
  mha.init(ps, "mha", 2, 4, 4, 4, rng);
  Tape<double> t;
  auto q = t.leaf(random_tensor({1, 1, 4}, rng), false);
  auto kv_real = random_tensor({1, 2, 4}, rng);
  // Extend with garbage keys but mask them out.
  Tensor<double> kv_padded({1, 4, 4});
  for (int j = 0; j < 8; ++j) kv_padded[j] = kv_real[j];
  for (int j = 8; j < 16; ++j) kv_padded[j] = 99.0;
  auto bias = key_padding_bias<double>(1, {2}, 4);
  auto out_masked =
      mha(t, q, t.leaf(kv_padded, false), &bias);
  auto out_plain = mha(t, q, t.leaf(kv_real, false));
  for (int j = 0; j < 4; ++j)
    EXPECT_NEAR(out_masked.val()[j], out_plain.val()[j], 1e-9);
}

TEST(Blocks, EncoderLayerGrad) {
  Rng rng(3);
  ParameterStore<double> ps;
  TransformerEncoderLayer<double> layer;
  layer.init(ps, "enc", 2, 4, 8, rng);
  auto x0 = random_tensor({2, 3, 4}, rng);
  auto c = random_tensor({2, 3, 4}, rng);
  auto res = check_gradient(
      x0,
      [&](Tape<double>& t, Var<double> x) {
        return sum_all(mul(layer(t, x), t.constant(c)));
      },
      1e-5);
  EXPECT_LT(res.max_rel_err, 1e-5) << res.worst;
}

TEST(Blocks, CausalBiasBlocksFuture) {
  auto bias = causal_bias<double>(3);
  EXPECT_EQ(bias.at(0, 0, 0, 0), 0.0);
  EXPECT_LT(bias.at(0, 0, 0, 2), -1e8);
  EXPECT_EQ(bias.at(0, 0, 2, 1), 0.0);
}

TEST(Rng, DeterministicSubstreams) {
  EXPECT_EQ(substream_seed(42, "a", 0), substream_seed(42, "a", 0));
  EXPECT_NE(substream_seed(42, "a", 0), substream_seed(42, "a", 1));
  EXPECT_NE(substream_seed(42, "a", 0), substream_seed(42, "b", 0));
  Rng r1(7), r2(7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(r1.next_u64(), r2.next_u64());
}

}  // namespace
