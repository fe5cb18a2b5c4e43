#pragma once

#include <vector>

#include "affordsplat/core/tape.hpp"

namespace affordsplat::nn {

using core::Tensor;
using core::Var;

// Graph-side losses used for training. Their forward values agree with the
// scalar versions in evalkit to floating-point accumulation error.

// Mean over valid positions of -[g ln(p+eps) + (1-g) ln(1-p+eps)].
// pred/gt/valid all [B,N] (or any equal shape); valid is a constant mask.
template <typename S>
Var<S> bce_graph(Var<S> pred, Var<S> gt, Var<S> valid, S eps = S(1e-7)) {
  auto term = neg(add(mul(gt, vlog(add_scalar(pred, eps))),
                      mul(add_scalar(neg(gt), S(1)),
                          vlog(add_scalar(neg(pred), S(1) + eps)))));
  auto masked = mul(term, valid);
  S count = 0;
  {
    const Tensor<S>& v = valid.val();
    for (std::int64_t i = 0; i < v.numel(); ++i) count += v[i];
  }
  return mul_scalar(sum_all(masked), S(1) / count);
}

// 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps) over valid positions.
template <typename S>
Var<S> dice_graph(Var<S> pred, Var<S> gt, Var<S> valid, S eps = S(1)) {
  auto p = mul(pred, valid);
  auto g = mul(gt, valid);
  auto inter = sum_all(mul(p, g));
  auto denom = add_scalar(add(sum_all(p), sum_all(g)), eps);
  return add_scalar(neg(div(add_scalar(mul_scalar(inter, S(2)), eps), denom)),
                    S(1));
}

// Mean cross-entropy of logits [L,V] against integer targets, skipping
// positions where target == pad_id.
template <typename S>
Var<S> cross_entropy_graph(Var<S> logits, const std::vector<std::int64_t>& targets,
                           std::int64_t pad_id) {
  auto logp = log_softmax_last(logits);
  std::vector<std::int64_t> keep_rows, keep_ids;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == pad_id) continue;
    keep_rows.push_back((std::int64_t)i);
    keep_ids.push_back(targets[i]);
  }
  if (keep_rows.empty())
    throw UndefinedLossError("cross_entropy_graph: all-pad target");
  auto rows = take_rows(logp, keep_rows);
  auto picked = take_last(rows, keep_ids);
  return neg(mean_all(picked));
}

}  // namespace affordsplat::nn
