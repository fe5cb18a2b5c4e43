#pragma once

#include <string>
#include <vector>

#include "affordsplat/affordnet/backbone.hpp"
#include "affordsplat/affordnet/config.hpp"
#include "affordsplat/affordnet/decoder.hpp"
#include "affordsplat/affordnet/fusion.hpp"
#include "affordsplat/gscore/types.hpp"
#include "affordsplat/nn/losses.hpp"
#include "affordsplat/textmod/model.hpp"

namespace affordsplat::affordnet {

using gscore::AffordanceMask;
using textmod::TokenSequence;

template <typename S>
struct ForwardResult {
  Var<S> mask_scores;                       // [B, N_batchmax]
  FusedFeatures<S> fused;                   // unified features + gate weights
  typename textmod::TextModel<S>::Encoded text;
  Var<S> h_aff_projected;                   // [B, 1, d_text]
};

template <typename S>
struct FinetuneLoss {
  Var<S> total;
  Var<S> bce;
  Var<S> dice;
  Var<S> text;
};

// The full network: hierarchical 3D encoder, Gaussian-text fusion,
// granularity-adaptive selection, dynamic-kernel mask decoding, and the
// language module.
template <typename S>
class AffordSplatNet {
 public:
  ModelConfig cfg;
  Backbone<S> backbone;
  Fusion<S> fusion;
  MaskDecoder<S> decoder;
  textmod::TextModel<S> text;

  void init(core::ParameterStore<S>& ps, const ModelConfig& c,
            std::int64_t vocab_size, std::uint64_t seed) {
    cfg = c;
    cfg.validate();
    core::Rng rng(core::substream_seed(seed, "init"));
    backbone.init(ps, cfg, rng);
    fusion.init(ps, cfg, rng);
    decoder.init(ps, cfg, rng);
    text.init(ps, vocab_size, cfg.text, rng);
  }

  ForwardResult<S> forward(Tape<S>& t, const BatchedGaussians& batch,
                           const std::vector<TokenSequence>& questions) const {
    if ((std::int64_t)questions.size() != batch.batch())
      throw ArgumentError("forward: question count != batch size");
    auto enc = text.encode(t, questions);
    Var<S> h_q = text.project_aff(t, enc.h_aff);  // [B,1,d_text]
    GranularityFeatures<S> gf = backbone.encode(t, batch);
    std::array<Var<S>, 3> fused_levels;
    for (int li = 0; li < 3; ++li)
      fused_levels[(std::size_t)li] =
          fusion.fuse_level(t, h_q, gf.features[(std::size_t)li], li);
    FusedFeatures<S> fused =
        decoder.select_granularity(t, fused_levels, gf, backbone, batch);
    Var<S> scores = decoder.decode_mask(t, fused, h_q, backbone, batch);
    return ForwardResult<S>{scores, fused, enc, h_q};
  }

  // Eq. 16: L_BCE + L_Dice + L_text over a supervised batch. Ground-truth
  // masks are padded to N_batchmax; invalid rows are excluded by validity.
  FinetuneLoss<S> finetune_loss(Tape<S>& t, const ForwardResult<S>& out,
                                const BatchedGaussians& batch,
                                const std::vector<TokenSequence>& answers,
                                const std::vector<AffordanceMask>& gt) const {
    const std::int64_t B = batch.batch();
    const std::int64_t Nmax = batch.n_max();
    if ((std::int64_t)gt.size() != B || (std::int64_t)answers.size() != B)
      throw ArgumentError("finetune_loss: batch size mismatch");
    Tensor<S> gt_t({B, Nmax});
    Tensor<S> valid_t({B, Nmax});
    for (std::int64_t b = 0; b < B; ++b) {
      if (gt[(std::size_t)b].count() != batch.n_real[(std::size_t)b])
        throw ArgumentError("finetune_loss: mask length != object size");
      for (std::int64_t i = 0; i < Nmax; ++i) {
        valid_t.at(b, i) = (S)batch.validity.at(b, i);
        gt_t.at(b, i) = i < gt[(std::size_t)b].count()
                            ? (S)gt[(std::size_t)b].scores[i]
                            : S(0);
      }
    }
    Var<S> gt_v = t.constant(gt_t);
    Var<S> valid_v = t.constant(valid_t);
    FinetuneLoss<S> loss;
    loss.bce = nn::bce_graph(out.mask_scores, gt_v, valid_v);
    loss.dice = nn::dice_graph(out.mask_scores, gt_v, valid_v);
    Var<S> text_sum;
    for (std::int64_t b = 0; b < B; ++b) {
      Var<S> lb = text.answer_loss(t, out.text, b, answers[(std::size_t)b]);
      text_sum = b == 0 ? lb : add(text_sum, lb);
    }
    loss.text = mul_scalar(text_sum, S(1) / S(B));
    loss.total = add(add(loss.bce, loss.dice), loss.text);
    return loss;
  }
};

}  // namespace affordsplat::affordnet
