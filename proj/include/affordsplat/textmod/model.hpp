#pragma once

#include <string>
#include <vector>

#include "affordsplat/core/params.hpp"
#include "affordsplat/core/tape.hpp"
#include "affordsplat/nn/blocks.hpp"
#include "affordsplat/nn/losses.hpp"
#include "affordsplat/textmod/vocab.hpp"

namespace affordsplat::textmod {

using core::ParameterStore;
using core::Rng;
using core::Tape;
using core::Tensor;
using core::Var;

struct TextConfig {
  std::int64_t d_text = 64;
  int heads = 4;
  int encoder_layers = 2;
  int decoder_layers = 2;
  std::int64_t ffn_mult = 2;
  std::int64_t max_len = 64;
};

// Appends one marker token before EOS when the sequence lacks it, so h_Aff
// always exists at encode time.
inline TokenSequence ensure_aff_token(TokenSequence seq) {
  if (seq.aff_position) return seq;
  if (seq.ids.empty() || seq.ids.back() != Vocabulary::kEos)
    throw ContractError("token sequence missing EOS");
  seq.ids.insert(seq.ids.end() - 1, Vocabulary::kAff);
  seq.aff_position = (std::int64_t)seq.ids.size() - 2;
  return seq;
}

// Small trainable language module. Parameter groups: "textenc." (frozen at
// finetune time), "textproj." (the H_Aff projection) and "texthead." (the
// answer decoder).
template <typename S>
class TextModel {
 public:
  TextConfig cfg;
  std::int64_t vocab_size = 0;

  void init(ParameterStore<S>& ps, std::int64_t vocab_sz, const TextConfig& c,
            Rng& rng) {
    cfg = c;
    vocab_size = vocab_sz;
    embed_ = &ps.add("textenc.embed",
                     core::normal_init<S>({vocab_sz, c.d_text}, 0.02, rng));
    pos_ = &ps.add("textenc.pos",
                   core::normal_init<S>({c.max_len, c.d_text}, 0.02, rng));
    enc_layers_.resize((std::size_t)c.encoder_layers);
    for (int i = 0; i < c.encoder_layers; ++i)
      enc_layers_[(std::size_t)i].init(ps, "textenc.layer" + std::to_string(i),
                                       c.heads, c.d_text,
                                       c.d_text * c.ffn_mult, rng);
    proj1_.init(ps, "textproj.fc1", c.d_text, c.d_text, rng);
    proj2_.init(ps, "textproj.fc2", c.d_text, c.d_text, rng);

    dec_embed_ = &ps.add("texthead.embed",
                         core::normal_init<S>({vocab_sz, c.d_text}, 0.02, rng));
    dec_pos_ = &ps.add("texthead.pos",
                       core::normal_init<S>({c.max_len, c.d_text}, 0.02, rng));
    dec_layers_.resize((std::size_t)c.decoder_layers);
    for (int i = 0; i < c.decoder_layers; ++i)
      dec_layers_[(std::size_t)i].init(ps, "texthead.layer" + std::to_string(i),
                                       c.heads, c.d_text, c.d_text,
                                       c.d_text * c.ffn_mult, rng);
    out_.init(ps, "texthead.out", c.d_text, vocab_sz, rng);
  }

  struct Encoded {
    Var<S> hidden;  // [B, L, d_text]
    Var<S> h_aff;   // [B, d_text]
    std::vector<std::int64_t> lengths;
    std::int64_t L = 0;
  };

  // Batched encode with PAD-masked attention. Every sequence must carry the
  // marker (append via ensure_aff_token when needed).
  Encoded encode(Tape<S>& t, const std::vector<TokenSequence>& seqs,
                 bool require_aff = true) const {
    const std::int64_t B = (std::int64_t)seqs.size();
    if (B == 0) throw ArgumentError("encode: empty batch");
    std::int64_t L = 0;
    for (const auto& s : seqs) L = std::max(L, s.length());
    if (L > cfg.max_len) throw ArgumentError("sequence exceeds max_len");
    std::vector<std::int64_t> flat((std::size_t)(B * L), Vocabulary::kPad);
    std::vector<std::int64_t> lengths;
    for (std::int64_t b = 0; b < B; ++b) {
      const auto& s = seqs[(std::size_t)b];
      if (require_aff && !s.aff_position)
        throw ContractError("encode: sequence lacks the marker token");
      for (std::int64_t i = 0; i < s.length(); ++i)
        flat[(std::size_t)(b * L + i)] = s.ids[(std::size_t)i];
      std::int64_t real_len = s.length();
      while (real_len > 0 &&
             s.ids[(std::size_t)real_len - 1] == Vocabulary::kPad)
        --real_len;
      lengths.push_back(real_len);
    }
    Var<S> table = t.param(*embed_);
    Var<S> tokens = reshape(take_rows(table, flat), {B, L, cfg.d_text});
    Var<S> pos = slice_axis(t.param(*pos_), 0, 0, L);
    Var<S> x = add(tokens, pos);
    Tensor<S> bias = nn::key_padding_bias<S>(B, lengths, L);
    for (const auto& layer : enc_layers_) x = layer(t, x, &bias);

    std::vector<std::int64_t> gather;
    for (std::int64_t b = 0; b < B; ++b) {
      const auto& s = seqs[(std::size_t)b];
      const std::int64_t p = s.aff_position ? *s.aff_position : 0;
      gather.push_back(b * L + p);
    }
    Var<S> h_aff =
        take_rows(reshape(x, {B * L, cfg.d_text}), gather);  // [B, d_text]
    return Encoded{x, h_aff, lengths, L};
  }

  // Two-layer perceptron, output reshaped to a length-1 query sequence.
  Var<S> project_aff(Tape<S>& t, Var<S> h_aff) const {
    const std::int64_t B = h_aff.val().dim(0);
    Var<S> y = proj2_(t, gelu(proj1_(t, h_aff)));
    return reshape(y, {B, 1, cfg.d_text});
  }

  // Teacher-forced next-token logits for one batch element. The answer's
  // ids must include BOS and EOS; positions 0..L-2 predict 1..L-1.
  Var<S> answer_logits(Tape<S>& t, const Encoded& enc, std::int64_t b,
                       const TokenSequence& answer) const {
    const std::int64_t L_dec = answer.length() - 1;
    if (L_dec < 1) throw ArgumentError("answer too short");
    if (L_dec > cfg.max_len) throw ArgumentError("answer exceeds max_len");
    std::vector<std::int64_t> in_ids(answer.ids.begin(),
                                     answer.ids.end() - 1);
    Var<S> tokens = reshape(take_rows(t.param(*dec_embed_), in_ids),
                            {1, L_dec, cfg.d_text});
    Var<S> x = add(tokens, slice_axis(t.param(*dec_pos_), 0, 0, L_dec));
    const std::int64_t B = enc.hidden.val().dim(0);
    Var<S> memory = slice_axis(enc.hidden, 0, b, 1);  // [1, L, d]
    Tensor<S> self_bias = nn::causal_bias<S>(L_dec);
    Tensor<S> cross_bias =
        nn::key_padding_bias<S>(1, {enc.lengths[(std::size_t)b]}, enc.L);
    (void)B;
    for (const auto& layer : dec_layers_)
      x = layer(t, x, memory, &self_bias, &cross_bias);
    return reshape(out_(t, x), {L_dec, vocab_size});
  }

  // Mean cross-entropy of the teacher-forced answer.
  Var<S> answer_loss(Tape<S>& t, const Encoded& enc, std::int64_t b,
                     const TokenSequence& answer) const {
    std::vector<std::int64_t> targets(answer.ids.begin() + 1,
                                      answer.ids.end());
    return nn::cross_entropy_graph(answer_logits(t, enc, b, answer), targets,
                                   Vocabulary::kPad);
  }

  // Greedy decode conditioned on one encoded question.
  std::vector<std::int64_t> greedy_decode(const std::vector<TokenSequence>& qs,
                                          std::int64_t b, int max_steps) const {
    std::vector<std::int64_t> ids{Vocabulary::kBos};
    for (int step = 0; step < max_steps; ++step) {
      Tape<S> t;
      Encoded enc = encode(t, qs);
      TokenSequence prefix;
      prefix.ids = ids;
      prefix.ids.push_back(Vocabulary::kEos);  // placeholder for slicing
      Var<S> logits = answer_logits(t, enc, b, prefix);
      const Tensor<S>& lv = logits.val();
      const std::int64_t last = lv.dim(0) - 1;
      std::int64_t best = 0;
      for (std::int64_t v = 1; v < vocab_size; ++v)
        if (lv.at(last, v) > lv.at(last, best)) best = v;
      if (best == Vocabulary::kEos) break;
      ids.push_back(best);
    }
    return std::vector<std::int64_t>(ids.begin() + 1, ids.end());
  }

 private:
  core::Parameter<S>* embed_ = nullptr;
  core::Parameter<S>* pos_ = nullptr;
  std::vector<nn::TransformerEncoderLayer<S>> enc_layers_;
  nn::Linear<S> proj1_, proj2_;
  core::Parameter<S>* dec_embed_ = nullptr;
  core::Parameter<S>* dec_pos_ = nullptr;
  std::vector<nn::TransformerDecoderLayer<S>> dec_layers_;
  nn::Linear<S> out_;
};

}  // namespace affordsplat::textmod
