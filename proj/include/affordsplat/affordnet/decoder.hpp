#pragma once

#include <string>
#include <vector>

#include "affordsplat/affordnet/backbone.hpp"
#include "affordsplat/affordnet/config.hpp"
#include "affordsplat/nn/blocks.hpp"

namespace affordsplat::affordnet {

template <typename S>
struct FusedFeatures {
  Var<S> features;      // [B, N, d] at the unified resolution N = N_batchmin
  Var<S> gate_weights;  // [B, 3, d], softmax over the granularity axis
};

// Granularity-adaptive selection (Eqs. 3-5) and the dynamic-kernel mask
// decoder (Eqs. 6-9).
template <typename S>
class MaskDecoder {
 public:
  void init(ParameterStore<S>& ps, const ModelConfig& cfg, Rng& rng) {
    cfg_ = cfg;
    w_gate_ = &ps.add("decoder.w_gate", Tensor<S>({3, cfg.d}));
    query_map_.init(ps, "decoder.query_map", cfg.d_text, cfg.d, rng);
    layers_.resize((std::size_t)cfg.decoder_layers);
    for (int i = 0; i < cfg.decoder_layers; ++i)
      layers_[(std::size_t)i].init(ps, "decoder.layer" + std::to_string(i),
                                   cfg.heads, cfg.d, cfg.d, cfg.d * cfg.ffn_mult,
                                   rng);
  }

  // Upsamples each fused level to the batch-minimum resolution with IDW,
  // softmax-gates the three levels per channel, and mixes them.
  FusedFeatures<S> select_granularity(Tape<S>& t,
                                      const std::array<Var<S>, 3>& levels,
                                      const GranularityFeatures<S>& gf,
                                      const Backbone<S>& backbone,
                                      const BatchedGaussians& batch) const {
    const std::int64_t B = batch.batch();
    const std::int64_t N = batch.n_min();
    std::array<Var<S>, 3> up;
    for (int li = 0; li < 3; ++li) {
      std::vector<Var<S>> rows;
      for (std::int64_t b = 0; b < B; ++b) {
        Tensor<float> src_pos({gf.positions[(std::size_t)li].dim(1), 3});
        for (std::int64_t i = 0; i < src_pos.dim(0); ++i)
          for (int j = 0; j < 3; ++j)
            src_pos.at(i, j) = (float)gf.positions[(std::size_t)li].at(b, i, j);
        Tensor<float> dst_pos({N, 3});
        for (std::int64_t i = 0; i < N; ++i)
          for (int j = 0; j < 3; ++j) dst_pos.at(i, j) = batch.down.at(b, i, j);
        Var<S> feat_b = reshape(slice_axis(levels[(std::size_t)li], 0, b, 1),
                                {src_pos.dim(0), cfg_.d});
        rows.push_back(backbone.idw_apply(t, feat_b, src_pos, dst_pos));
      }
      up[(std::size_t)li] = stack0(rows);  // [B,N,d]
    }
    // Gate logits: learnable per-(level, channel) weights applied to the
    // point-pooled level features; softmax across the granularity axis.
    std::vector<Var<S>> pooled;
    for (int li = 0; li < 3; ++li)
      pooled.push_back(mean_axis(up[(std::size_t)li], 1));  // [B,d]
    Var<S> stacked = stack0(pooled);                         // [3,B,d]
    Var<S> logits = mul(transpose01(t, stacked), t.param(*w_gate_));  // [B,3,d]
    Var<S> w = transpose_last2(softmax_last(transpose_last2(logits)));
    Var<S> fused;
    for (int li = 0; li < 3; ++li) {
      Var<S> wi = slice_axis(w, 1, li, 1);  // [B,1,d]
      Var<S> term = mul(up[(std::size_t)li], wi);
      fused = li == 0 ? term : add(fused, term);
    }
    return FusedFeatures<S>{fused, w};
  }

  // Eqs. 6-7: IDW to the padded resolution, then zero out invalid rows.
  Var<S> upsample_valid(Tape<S>& t, Var<S> fused, const Backbone<S>& backbone,
                        const BatchedGaussians& batch) const {
    const std::int64_t B = batch.batch();
    const std::int64_t N = batch.n_min();
    const std::int64_t Nmax = batch.n_max();
    std::vector<Var<S>> rows;
    for (std::int64_t b = 0; b < B; ++b) {
      Tensor<float> src_pos({N, 3});
      for (std::int64_t i = 0; i < N; ++i)
        for (int j = 0; j < 3; ++j) src_pos.at(i, j) = batch.down.at(b, i, j);
      Tensor<float> dst_pos({Nmax, 3});
      for (std::int64_t i = 0; i < Nmax; ++i)
        for (int j = 0; j < 3; ++j) dst_pos.at(i, j) = batch.padded.at(b, i, j);
      Var<S> feat_b = reshape(slice_axis(fused, 0, b, 1), {N, cfg_.d});
      rows.push_back(backbone.idw_apply(t, feat_b, src_pos, dst_pos));
    }
    Var<S> up = stack0(rows);  // [B,Nmax,d]
    Tensor<S> valid({B, Nmax, 1});
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t i = 0; i < Nmax; ++i)
        valid.at(b, i, 0) = (S)batch.validity.at(b, i);
    return mul(up, t.constant(valid));
  }

  // Eq. 8: a transformer decoder conditioned on the projected affordance
  // query produces one width-d kernel per batch element.
  Var<S> dynamic_kernel(Tape<S>& t, Var<S> f_valid, Var<S> h_aff_q) const {
    Var<S> x = query_map_(t, h_aff_q);  // [B,1,d]
    for (const auto& layer : layers_) x = layer(t, x, f_valid);
    return x;  // [B,1,d]
  }

  // Eq. 9: pointwise inner product with the kernel, sigmoid, and the
  // validity mask. Padded rows come out exactly zero.
  Var<S> mask_from_kernel(Tape<S>& t, Var<S> f_valid, Var<S> kernel,
                          const BatchedGaussians& batch) const {
    const std::int64_t B = batch.batch();
    const std::int64_t Nmax = batch.n_max();
    Var<S> logits = matmul(f_valid, transpose_last2(kernel));  // [B,Nmax,1]
    Tensor<S> valid({B, Nmax});
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t i = 0; i < Nmax; ++i)
        valid.at(b, i) = (S)batch.validity.at(b, i);
    return mul(reshape(sigmoid(logits), {B, Nmax}), t.constant(valid));
  }

  Var<S> decode_mask(Tape<S>& t, const FusedFeatures<S>& fused, Var<S> h_aff_q,
                     const Backbone<S>& backbone,
                     const BatchedGaussians& batch) const {
    Var<S> f_valid = upsample_valid(t, fused.features, backbone, batch);
    Var<S> kernel = dynamic_kernel(t, f_valid, h_aff_q);
    return mask_from_kernel(t, f_valid, kernel, batch);
  }

 private:
  // [3,B,d] -> [B,3,d]
  static Var<S> transpose01(Tape<S>& t, Var<S> x) {
    const std::int64_t A = x.val().dim(0), B = x.val().dim(1),
                       D = x.val().dim(2);
    return reshape(permute_0213(reshape(x, {1, A, B, D})), {B, A, D});
  }

  ModelConfig cfg_;
  core::Parameter<S>* w_gate_ = nullptr;
  nn::Linear<S> query_map_;
  std::vector<nn::TransformerDecoderLayer<S>> layers_;
};

}  // namespace affordsplat::affordnet
