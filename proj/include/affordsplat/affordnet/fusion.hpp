#pragma once

#include <string>

#include "affordsplat/affordnet/backbone.hpp"
#include "affordsplat/affordnet/config.hpp"
#include "affordsplat/nn/blocks.hpp"

namespace affordsplat::affordnet {

// Gaussian-text fusion: cross-attention with the affordance query against
// one granularity's features, then channel recalibration. The attention and
// channel weights are shared across levels; a learned per-level embedding
// carries the level identity.
template <typename S>
class Fusion {
 public:
  void init(ParameterStore<S>& ps, const ModelConfig& cfg, Rng& rng) {
    cfg_ = cfg;
    cross_.init(ps, "fusion.cross", cfg.heads, cfg.d_text, cfg.d, cfg.d_text,
                rng);
    for (int i = 0; i < 3; ++i)
      posemb_[(std::size_t)i] = &ps.add("fusion.posemb.level" + std::to_string(i),
                                        core::normal_init<S>({cfg.d_text}, 0.02, rng));
    bridge_ffn_.init(ps, "fusion.bridge.ffn", cfg.d_text,
                     cfg.d_text * cfg.ffn_mult, rng);
    bridge_map_.init(ps, "fusion.bridge.map", cfg.d_text, cfg.d, rng);
    const std::int64_t d2 = 2 * cfg.d;
    squeeze1_.init(ps, "fusion.channel.fc1", d2, std::max<std::int64_t>(1, d2 / 4),
                   rng);
    squeeze2_.init(ps, "fusion.channel.fc2", std::max<std::int64_t>(1, d2 / 4),
                   cfg.d, rng);
    channel_proj_.init(ps, "fusion.channel.proj", d2, cfg.d, rng);
  }

  // Eq. 1: multi-head cross-attention (query H_Aff, keys/values F_g) plus a
  // learned per-granularity positional embedding. Output [B, 1, d_text].
  Var<S> cross_attend(Tape<S>& t, Var<S> h_aff_q, Var<S> f_g, int level) const {
    Var<S> attended = cross_(t, h_aff_q, f_g);
    return add(attended, t.param(*posemb_[(std::size_t)level]));
  }

  // Residual feed-forward over F_spatial, then the learned d_text -> d map.
  Var<S> spatial_bridge(Tape<S>& t, Var<S> f_spatial) const {
    Var<S> res = add(f_spatial, bridge_ffn_(t, f_spatial));
    return bridge_map_(t, res);  // [B, 1, d]
  }

  // Eq. 2: broadcast the spatial summary, concatenate along channels,
  // squeeze over points, gate the geometric half, project back to d and add
  // the residual F_g.
  Var<S> channel_attend(Tape<S>& t, Var<S> f_spatial_res, Var<S> f_g) const {
    const std::int64_t N = f_g.val().dim(1);
    Var<S> fb = expand_axis(f_spatial_res, 1, N);    // [B,N,d]
    Var<S> cat = concat<S>({fb, f_g}, 2);            // [B,N,2d]
    Var<S> squeezed = mean_axis(cat, 1);             // [B,2d]
    Var<S> gates = sigmoid(squeeze2_(t, gelu(squeeze1_(t, squeezed))));
    const std::int64_t B = f_g.val().dim(0);
    Var<S> scaled = mul(f_g, reshape(gates, {B, 1, cfg_.d}));
    Var<S> recal = concat<S>({fb, scaled}, 2);       // [B,N,2d]
    return add(channel_proj_(t, recal), f_g);
  }

  // Full per-level fusion pass.
  Var<S> fuse_level(Tape<S>& t, Var<S> h_aff_q, Var<S> f_g, int level) const {
    Var<S> f_spatial = cross_attend(t, h_aff_q, f_g, level);
    Var<S> f_bar = spatial_bridge(t, f_spatial);
    return channel_attend(t, f_bar, f_g);
  }

 private:
  ModelConfig cfg_;
  nn::MultiHeadAttention<S> cross_;
  std::array<core::Parameter<S>*, 3> posemb_{};
  nn::FeedForward<S> bridge_ffn_;
  nn::Linear<S> bridge_map_;
  nn::Linear<S> squeeze1_, squeeze2_, channel_proj_;
};

}  // namespace affordsplat::affordnet
