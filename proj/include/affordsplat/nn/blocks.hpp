#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "affordsplat/core/params.hpp"
#include "affordsplat/core/tape.hpp"

namespace affordsplat::nn {

using core::Parameter;
using core::ParameterStore;
using core::Rng;
using core::Shape;
using core::Tape;
using core::Tensor;
using core::Var;

template <typename S>
struct Linear {
  Parameter<S>* W = nullptr;  // [in, out]
  Parameter<S>* b = nullptr;  // [out], optional

  void init(ParameterStore<S>& ps, const std::string& name, std::int64_t in,
            std::int64_t out, Rng& rng, bool bias = true) {
    W = &ps.add(name + ".W", core::glorot_uniform<S>({in, out}, in, out, rng));
    if (bias) b = &ps.add(name + ".b", Tensor<S>({out}));
  }

  Var<S> operator()(Tape<S>& t, Var<S> x) const {
    Var<S> y = matmul(x, t.param(*W));
    if (b) y = add(y, t.param(*b));
    return y;
  }
};

template <typename S>
struct LayerNorm {
  Parameter<S>* gamma = nullptr;
  Parameter<S>* beta = nullptr;
  S eps = S(1e-5);

  void init(ParameterStore<S>& ps, const std::string& name, std::int64_t d) {
    gamma = &ps.add(name + ".gamma", Tensor<S>::full({d}, S(1)));
    beta = &ps.add(name + ".beta", Tensor<S>({d}));
  }

  Var<S> operator()(Tape<S>& t, Var<S> x) const {
    Var<S> mu = mean_axis(x, -1, true);
    Var<S> xc = sub(x, mu);
    Var<S> var = mean_axis(mul(xc, xc), -1, true);
    Var<S> inv = div(xc, vsqrt(add_scalar(var, eps)));
    return add(mul(inv, t.param(*gamma)), t.param(*beta));
  }
};

template <typename S>
struct FeedForward {
  Linear<S> fc1, fc2;

  void init(ParameterStore<S>& ps, const std::string& name, std::int64_t d,
            std::int64_t hidden, Rng& rng) {
    fc1.init(ps, name + ".fc1", d, hidden, rng);
    fc2.init(ps, name + ".fc2", hidden, d, rng);
  }

  Var<S> operator()(Tape<S>& t, Var<S> x) const {
    return fc2(t, gelu(fc1(t, x)));
  }
};

// Multi-head attention. Query input [B, Lq, dq], key/value input [B, Lk, dkv],
// output [B, Lq, d_model]. An optional additive bias [B, 1, 1, Lk] (or any
// shape broadcastable to [B, h, Lq, Lk]) masks keys before the softmax.
template <typename S>
struct MultiHeadAttention {
  int heads = 1;
  std::int64_t d_model = 0;
  Linear<S> wq, wk, wv, wo;

  void init(ParameterStore<S>& ps, const std::string& name, int n_heads,
            std::int64_t dq, std::int64_t dkv, std::int64_t dm, Rng& rng) {
    if (dm % n_heads != 0)
      throw ArgumentError("d_model must be divisible by heads");
    heads = n_heads;
    d_model = dm;
    wq.init(ps, name + ".wq", dq, dm, rng, false);
    wk.init(ps, name + ".wk", dkv, dm, rng, false);
    wv.init(ps, name + ".wv", dkv, dm, rng, false);
    wo.init(ps, name + ".wo", dm, dm, rng, false);
  }

  Var<S> operator()(Tape<S>& t, Var<S> q_in, Var<S> kv_in,
                    const Tensor<S>* bias = nullptr) const {
    const std::int64_t B = q_in.val().dim(0);
    const std::int64_t Lq = q_in.val().dim(1);
    const std::int64_t Lk = kv_in.val().dim(1);
    const std::int64_t dh = d_model / heads;

    auto split = [&](Var<S> x, std::int64_t L) {
      return permute_0213(reshape(x, {B, L, heads, dh}));  // [B,h,L,dh]
    };
    Var<S> q = split(wq(t, q_in), Lq);
    Var<S> k = split(wk(t, kv_in), Lk);
    Var<S> v = split(wv(t, kv_in), Lk);

    Var<S> scores = mul_scalar(matmul(q, transpose_last2(k)),
                               S(1.0 / std::sqrt(static_cast<double>(dh))));
    if (bias) scores = add(scores, t.constant(*bias));
    Var<S> attn = softmax_last(scores);          // [B,h,Lq,Lk]
    Var<S> ctx = matmul(attn, v);                // [B,h,Lq,dh]
    Var<S> merged = reshape(permute_0213(ctx), {B, Lq, d_model});
    return wo(t, merged);
  }
};

template <typename S>
struct TransformerEncoderLayer {
  MultiHeadAttention<S> attn;
  FeedForward<S> ffn;
  LayerNorm<S> ln1, ln2;

  void init(ParameterStore<S>& ps, const std::string& name, int heads,
            std::int64_t d, std::int64_t ffn_hidden, Rng& rng) {
    attn.init(ps, name + ".attn", heads, d, d, d, rng);
    ffn.init(ps, name + ".ffn", d, ffn_hidden, rng);
    ln1.init(ps, name + ".ln1", d);
    ln2.init(ps, name + ".ln2", d);
  }

  Var<S> operator()(Tape<S>& t, Var<S> x, const Tensor<S>* bias = nullptr) const {
    x = ln1(t, add(x, attn(t, x, x, bias)));
    x = ln2(t, add(x, ffn(t, x)));
    return x;
  }
};

template <typename S>
struct TransformerDecoderLayer {
  MultiHeadAttention<S> self_attn, cross_attn;
  FeedForward<S> ffn;
  LayerNorm<S> ln1, ln2, ln3;

  void init(ParameterStore<S>& ps, const std::string& name, int heads,
            std::int64_t d, std::int64_t d_mem, std::int64_t ffn_hidden,
            Rng& rng) {
    self_attn.init(ps, name + ".self", heads, d, d, d, rng);
    cross_attn.init(ps, name + ".cross", heads, d, d_mem, d, rng);
    ffn.init(ps, name + ".ffn", d, ffn_hidden, rng);
    ln1.init(ps, name + ".ln1", d);
    ln2.init(ps, name + ".ln2", d);
    ln3.init(ps, name + ".ln3", d);
  }

  Var<S> operator()(Tape<S>& t, Var<S> x, Var<S> memory,
                    const Tensor<S>* self_bias = nullptr,
                    const Tensor<S>* cross_bias = nullptr) const {
    x = ln1(t, add(x, self_attn(t, x, x, self_bias)));
    x = ln2(t, add(x, cross_attn(t, x, memory, cross_bias)));
    x = ln3(t, add(x, ffn(t, x)));
    return x;
  }
};

// Additive attention bias that hides key positions j >= valid[b].
template <typename S>
Tensor<S> key_padding_bias(std::int64_t B, const std::vector<std::int64_t>& valid,
                           std::int64_t Lk) {
  Tensor<S> bias({B, 1, 1, Lk});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t j = 0; j < Lk; ++j)
      bias.at(b, 0, 0, j) = j < valid[(std::size_t)b] ? S(0) : S(-1e9);
  return bias;
}

// Additive causal bias over an L x L self-attention.
template <typename S>
Tensor<S> causal_bias(std::int64_t L) {
  Tensor<S> bias({1, 1, L, L});
  for (std::int64_t i = 0; i < L; ++i)
    for (std::int64_t j = 0; j < L; ++j)
      bias.at(0, 0, i, j) = j <= i ? S(0) : S(-1e9);
  return bias;
}

}  // namespace affordsplat::nn
