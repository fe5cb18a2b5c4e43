#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "affordsplat/affordnet/config.hpp"
#include "affordsplat/core/params.hpp"
#include "affordsplat/core/tape.hpp"
#include "affordsplat/gscore/ops.hpp"
#include "affordsplat/gscore/types.hpp"
#include "affordsplat/nn/blocks.hpp"

namespace affordsplat::cmsa {

using affordnet::ModelConfig;
using core::concat;
using core::ParameterStore;
using core::Rng;
using core::Tape;
using core::Tensor;
using core::unary_op;
using core::Var;
using gscore::PointCloudObject;

// Straight-through region selection over mask scores. When no score clears
// the 0.5 threshold, uniform 0.5 values are substituted through the same
// identity surrogate so gradients exist; callers count the fallbacks.
template <typename S>
struct SteMask {
  Var<S> values;                       // [N]
  std::vector<std::int64_t> selected;  // rows in the region
  bool fallback = false;
};

template <typename S>
SteMask<S> ste_select(Tape<S>& t, Var<S> scores, bool relaxed = false) {
  const std::int64_t n = scores.val().numel();
  SteMask<S> m;
  for (std::int64_t i = 0; i < n; ++i)
    if (scores.val()[i] >= S(0.5)) m.selected.push_back(i);
  if (m.selected.empty()) {
    m.fallback = true;
    m.values = unary_op<S>(scores, [](S) { return S(0.5); },
                           [](S, S) { return S(1); });
    for (std::int64_t i = 0; i < n; ++i) m.selected.push_back(i);
  } else {
    m.values = ste_threshold(scores, relaxed);
  }
  return m;
}

// Gathers the selected rows scaled by their mask values (the mask enters
// multiplicatively, so the surrogate gradient reaches the scores).
template <typename S>
Var<S> masked_region_rows(Tape<S>& t, Var<S> rows, const SteMask<S>& mask) {
  Var<S> sel_rows = take_rows(rows, mask.selected);
  Var<S> sel_vals = reshape(take_rows(mask.values, mask.selected),
                            {(std::int64_t)mask.selected.size(), 1});
  return mul(sel_rows, sel_vals);
}

// Modality-specific set encoders (Phi_gs over 10-dim rows, Phi_pc over 3-dim
// points) and the shared affinity head projecting into the d_consis space.
template <typename S>
class CmsaModule {
 public:
  void init(ParameterStore<S>& ps, const ModelConfig& cfg, Rng& rng) {
    cfg_ = cfg;
    const std::int64_t w = cfg.cmsa_width_or_default();
    gs1_.init(ps, "cmsa.gs.fc1", gscore::kStructDim, w, rng);
    gs2_.init(ps, "cmsa.gs.fc2", w, w, rng);
    gs3_.init(ps, "cmsa.gs.fc3", 2 * w, w, rng);
    pc1_.init(ps, "cmsa.pc.fc1", 3, w, rng);
    pc2_.init(ps, "cmsa.pc.fc2", w, w, rng);
    pc3_.init(ps, "cmsa.pc.fc3", 2 * w, w, rng);
    shared_attn_.init(ps, "cmsa.shared.attn", cfg.cmsa_heads, w, w, w, rng);
    shared_ffn1_.init(ps, "cmsa.shared.ffn1", w, w, rng);
    shared_ffn2_.init(ps, "cmsa.shared.ffn2", w, cfg.d_consis, rng);
  }

  std::int64_t width() const { return cfg_.cmsa_width_or_default(); }

  // Token-level encoding of a row set. Positions steer the deterministic
  // geometric FPS cap; they are not trainable state.
  Var<S> encode_tokens(Tape<S>& t, Var<S> rows, const Tensor<float>& positions,
                       bool gs_branch) const {
    if (rows.val().dim(0) < 1)
      throw ArgumentError("encode_tokens: empty region");
    const nn::Linear<S>& f1 = gs_branch ? gs1_ : pc1_;
    const nn::Linear<S>& f2 = gs_branch ? gs2_ : pc2_;
    const nn::Linear<S>& f3 = gs_branch ? gs3_ : pc3_;
    Var<S> h = gelu(f2(t, gelu(f1(t, rows))));  // [N,w]
    if (h.val().dim(0) > cfg_.cmsa_tokens) {
      auto picks = gscore::fps_geometric(positions, cfg_.cmsa_tokens);
      h = take_rows(h, picks);
    }
    const std::int64_t M = h.val().dim(0);
    Var<S> pooled = reshape(max_axis(h, 0), {1, width()});
    Var<S> skip = expand_axis(pooled, 0, M);
    return gelu(f3(t, concat<S>({h, skip}, 1)));  // [M,w]
  }

  // Shared cross-attention (query = region tokens, keys/values = full-object
  // tokens), mean pool, shared FFN, L2 normalization.
  Var<S> structural_affinity(Tape<S>& t, Var<S> f_aff, Var<S> f_full) const {
    const std::int64_t M = f_aff.val().dim(0);
    const std::int64_t N = f_full.val().dim(0);
    Var<S> attended = shared_attn_(t, reshape(f_aff, {1, M, width()}),
                                   reshape(f_full, {1, N, width()}));
    Var<S> pooled = mean_axis(reshape(attended, {M, width()}), 0);  // [w]
    Var<S> z = shared_ffn2_(t, gelu(shared_ffn1_(t, reshape(pooled, {1, width()}))));
    Var<S> norm = vsqrt(add_scalar(sum_all(mul(z, z)), S(1e-12)));
    return reshape(div(z, reshape(norm, {1, 1})), {cfg_.d_consis});
  }

 private:
  ModelConfig cfg_;
  nn::Linear<S> gs1_, gs2_, gs3_, pc1_, pc2_, pc3_;
  nn::MultiHeadAttention<S> shared_attn_;
  nn::Linear<S> shared_ffn1_, shared_ffn2_;
};

struct ConsistencyWeights {
  std::vector<double> w;
  double tau = 0.1;
};

// Softmax over -Chamfer/tau from precomputed distances.
inline ConsistencyWeights consistency_weights_from_distances(
    const std::vector<double>& dists, double tau) {
  if (tau <= 0) throw ArgumentError("consistency temperature must be > 0");
  if (dists.empty()) throw ArgumentError("consistency_weights: K >= 1 required");
  ConsistencyWeights cw;
  cw.tau = tau;
  double mx = -dists[0] / tau;
  for (double d : dists) mx = std::max(mx, -d / tau);
  double sum = 0;
  for (double d : dists) {
    cw.w.push_back(std::exp(-d / tau - mx));
    sum += cw.w.back();
  }
  for (double& w : cw.w) w /= sum;
  return cw;
}

// Eq. 13: weights from the Chamfer distance between the Gaussian centers and
// each paired point cloud.
inline ConsistencyWeights consistency_weights(
    const Tensor<float>& g_centers,
    const std::vector<const PointCloudObject*>& pcs, double tau) {
  std::vector<double> dists;
  for (const auto* pc : pcs)
    dists.push_back(gscore::chamfer_distance(g_centers, pc->points));
  return consistency_weights_from_distances(dists, tau);
}

// Sum_k w_k * (1 - cos(z_gs, z_pc_k)) on unit embeddings.
template <typename S>
Var<S> consistency_loss(Tape<S>& t, Var<S> z_gs,
                        const std::vector<Var<S>>& z_pcs,
                        const ConsistencyWeights& cw) {
  if (z_pcs.size() != cw.w.size())
    throw ArgumentError("consistency_loss: K mismatch");
  Var<S> total;
  for (std::size_t k = 0; k < z_pcs.size(); ++k) {
    Var<S> cos = sum_all(mul(z_gs, z_pcs[k]));
    Var<S> term = mul_scalar(add_scalar(neg(cos), S(1)), (S)cw.w[k]);
    total = k == 0 ? term : add(total, term);
  }
  return total;
}

inline double consistency_loss_scalar(const std::vector<double>& z_gs,
                                      const std::vector<std::vector<double>>& z_pcs,
                                      const ConsistencyWeights& cw) {
  double total = 0;
  for (std::size_t k = 0; k < z_pcs.size(); ++k) {
    double dot = 0;
    for (std::size_t j = 0; j < z_gs.size(); ++j) dot += z_gs[j] * z_pcs[k][j];
    total += cw.w[k] * (1.0 - dot);
  }
  return total;
}

}  // namespace affordsplat::cmsa
