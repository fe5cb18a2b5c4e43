#pragma once

#include <array>
#include <string>
#include <vector>

#include "affordsplat/affordnet/config.hpp"
#include "affordsplat/core/params.hpp"
#include "affordsplat/core/tape.hpp"
#include "affordsplat/gscore/ops.hpp"
#include "affordsplat/gscore/types.hpp"
#include "affordsplat/nn/blocks.hpp"

namespace affordsplat::affordnet {

using core::concat;
using core::ParameterStore;
using core::Rng;
using core::stack0;
using core::Tape;
using core::Tensor;
using core::Var;
using gscore::BatchedGaussians;

// Index structure of the three set-abstraction stages for one object. It
// depends only on point geometry, never on trainable state.
struct SaPlan {
  struct Level {
    std::vector<std::int64_t> fps;   // picks into the previous level
    Tensor<std::int64_t> group;      // [Ni, group_k] kNN into previous level
    Tensor<float> positions;         // [Ni, 3]
  };
  std::array<Level, 3> levels;
};

inline SaPlan build_sa_plan(const Tensor<float>& positions,
                            const std::array<std::int64_t, 3>& sizes,
                            std::int64_t group_k) {
  SaPlan plan;
  Tensor<float> prev = positions;
  for (int li = 0; li < 3; ++li) {
    auto& lvl = plan.levels[(std::size_t)li];
    if (sizes[(std::size_t)li] > prev.dim(0))
      throw ConfigError("granularity size exceeds available points");
    lvl.fps = gscore::fps_downsample(prev, sizes[(std::size_t)li], 0);
    lvl.positions = Tensor<float>({sizes[(std::size_t)li], 3});
    for (std::int64_t i = 0; i < sizes[(std::size_t)li]; ++i)
      for (int j = 0; j < 3; ++j)
        lvl.positions.at(i, j) = prev.at(lvl.fps[(std::size_t)i], j);
    const std::int64_t k = std::min(group_k, prev.dim(0));
    Tensor<float> dist;
    gscore::knn(prev, lvl.positions, k, lvl.group, dist);
    prev = lvl.positions;
  }
  return plan;
}

// Per-level features at the three granularities, batched, plus the constant
// level positions.
template <typename S>
struct GranularityFeatures {
  std::array<Var<S>, 3> features;     // [B, Ni, d]
  std::array<Tensor<S>, 3> positions; // [B, Ni, 3]
};

// Hierarchical 3D encoder: three set-abstraction stages over the 10-dim
// structural rows (FPS centroids, kNN grouping, shared per-group nets,
// max-pool), feature propagation back to the finest granularity, and a
// transformer refinement of the last decoding stage.
template <typename S>
class Backbone {
 public:
  void init(ParameterStore<S>& ps, const ModelConfig& cfg, Rng& rng) {
    cfg_ = cfg;
    const std::int64_t d = cfg.d;
    const std::int64_t in0 = 3 + gscore::kStructDim;
    sa1a_.init(ps, "backbone.sa1a", in0, d, rng);
    sa1b_.init(ps, "backbone.sa1b", d, d, rng);
    sa2a_.init(ps, "backbone.sa2a", 3 + d, d, rng);
    sa2b_.init(ps, "backbone.sa2b", d, d, rng);
    sa3a_.init(ps, "backbone.sa3a", 3 + d, d, rng);
    sa3b_.init(ps, "backbone.sa3b", d, d, rng);
    fp2_.init(ps, "backbone.fp2", 2 * d, d, rng);
    fp1_.init(ps, "backbone.fp1", 2 * d, d, rng);
    refine_.resize((std::size_t)cfg.encoder_refine_layers);
    for (int i = 0; i < cfg.encoder_refine_layers; ++i)
      refine_[(std::size_t)i].init(ps, "backbone.refine" + std::to_string(i),
                                   cfg.heads, d, d * cfg.ffn_mult, rng);
  }

  GranularityFeatures<S> encode(Tape<S>& t, const BatchedGaussians& batch) const {
    const std::int64_t B = batch.batch();
    const std::int64_t n_min = batch.n_min();
    if (n_min < cfg_.granularity_sizes[0])
      throw ConfigError("N_batchmin " + std::to_string(n_min) +
                        " below granularity size " +
                        std::to_string(cfg_.granularity_sizes[0]));
    std::vector<Var<S>> l1, l2, l3;
    std::array<Tensor<S>, 3> pos = {
        Tensor<S>({B, cfg_.granularity_sizes[0], 3}),
        Tensor<S>({B, cfg_.granularity_sizes[1], 3}),
        Tensor<S>({B, cfg_.granularity_sizes[2], 3})};
    for (std::int64_t b = 0; b < B; ++b) {
      Tensor<float> obj_pos({n_min, 3});
      Tensor<S> obj_feat({n_min, gscore::kStructDim});
      for (std::int64_t i = 0; i < n_min; ++i) {
        for (int j = 0; j < 3; ++j)
          obj_pos.at(i, j) = batch.down.at(b, i, j);
        for (int j = 0; j < gscore::kStructDim; ++j)
          obj_feat.at(i, j) = (S)batch.down.at(b, i, j);
      }
      SaPlan plan = build_sa_plan(obj_pos, cfg_.granularity_sizes, cfg_.group_k);
      for (int li = 0; li < 3; ++li)
        for (std::int64_t i = 0; i < cfg_.granularity_sizes[(std::size_t)li]; ++i)
          for (int j = 0; j < 3; ++j)
            pos[(std::size_t)li].at(b, i, j) =
                (S)plan.levels[(std::size_t)li].positions.at(i, j);

      Var<S> feats = t.constant(obj_feat);
      Tensor<float> prev_pos = obj_pos;
      std::array<Var<S>, 3> enc;
      for (int li = 0; li < 3; ++li) {
        const auto& lvl = plan.levels[(std::size_t)li];
        feats = sa_stage(t, feats, prev_pos, lvl, li);
        enc[(std::size_t)li] = feats;
        prev_pos = lvl.positions;
      }
      // feature propagation from the coarsest level back to level 1
      Var<S> d3 = enc[2];
      Var<S> up2 = idw_apply(t, d3, plan.levels[2].positions,
                             plan.levels[1].positions);
      Var<S> d2 = gelu(fp2_(t, concat<S>({up2, enc[1]}, 1)));
      Var<S> up1 = idw_apply(t, d2, plan.levels[1].positions,
                             plan.levels[0].positions);
      Var<S> d1 = gelu(fp1_(t, concat<S>({up1, enc[0]}, 1)));
      l1.push_back(d1);
      l2.push_back(d2);
      l3.push_back(d3);
    }
    GranularityFeatures<S> out;
    out.features[0] = stack0(l1);
    out.features[1] = stack0(l2);
    out.features[2] = stack0(l3);
    out.positions = pos;
    // refinement of the last decoding stage's point-level feature map
    for (const auto& layer : refine_)
      out.features[0] = layer(t, out.features[0]);
    return out;
  }

  // IDW feature interpolation between two constant position sets.
  Var<S> idw_apply(Tape<S>& t, Var<S> src_feat, const Tensor<float>& src_pos,
                   const Tensor<float>& dst_pos) const {
    const std::int64_t k = std::min<std::int64_t>(cfg_.idw_k, src_pos.dim(0));
    auto plan = gscore::idw_plan(src_pos, dst_pos, k, cfg_.idw_power);
    Tensor<S> w({plan.weights.dim(0), plan.weights.dim(1)});
    for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = (S)plan.weights[i];
    return linear_comb_rows(src_feat, w, plan.idx);
  }

 private:
  Var<S> sa_stage(Tape<S>& t, Var<S> prev_feats, const Tensor<float>& prev_pos,
                  const SaPlan::Level& lvl, int li) const {
    const std::int64_t M = lvl.group.dim(0);
    const std::int64_t k = lvl.group.dim(1);
    const std::int64_t F = prev_feats.val().dim(1);
    std::vector<std::int64_t> flat((std::size_t)(M * k));
    Tensor<S> rel({M, k, 3});
    for (std::int64_t i = 0; i < M; ++i)
      for (std::int64_t j = 0; j < k; ++j) {
        const std::int64_t src = lvl.group.at(i, j);
        flat[(std::size_t)(i * k + j)] = src;
        for (int c = 0; c < 3; ++c)
          rel.at(i, j, c) =
              (S)(prev_pos.at(src, c) - lvl.positions.at(i, c));
      }
    Var<S> members = reshape(take_rows(prev_feats, flat), {M, k, F});
    Var<S> g = concat<S>({t.constant(rel), members}, 2);
    const nn::Linear<S>& la = li == 0 ? sa1a_ : li == 1 ? sa2a_ : sa3a_;
    const nn::Linear<S>& lb = li == 0 ? sa1b_ : li == 1 ? sa2b_ : sa3b_;
    Var<S> h = gelu(lb(t, gelu(la(t, g))));
    return max_axis(h, 1);  // [M, d]
  }

  ModelConfig cfg_;
  nn::Linear<S> sa1a_, sa1b_, sa2a_, sa2b_, sa3a_, sa3b_;
  nn::Linear<S> fp2_, fp1_;
  std::vector<nn::TransformerEncoderLayer<S>> refine_;
};

}  // namespace affordsplat::affordnet
