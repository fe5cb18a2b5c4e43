#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "affordsplat/core/errors.hpp"

namespace affordsplat::evalkit {

// All metrics take plain double spans; callers slice out valid positions
// first. Metrics that can be undefined for a sample return nullopt; the
// aggregation layer excludes and counts those.

// Order-independent summation: the multiset of terms determines the result,
// so every metric is exactly invariant under joint permutations of its
// inputs.
inline double stable_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double acc = 0;
  for (double t : terms) acc += t;
  return acc;
}

// Binary cross-entropy over valid positions, eps inside the logs.
inline double bce_loss(const std::vector<double>& pred,
                       const std::vector<double>& gt,
                       const std::vector<double>& valid, double eps = 1e-7) {
  if (pred.size() != gt.size() || pred.size() != valid.size())
    throw ArgumentError("bce_loss shape mismatch");
  std::vector<double> terms;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (valid[i] == 0.0) continue;
    terms.push_back(-(gt[i] * std::log(pred[i] + eps) +
                      (1.0 - gt[i]) * std::log(1.0 - pred[i] + eps)));
  }
  if (terms.empty()) throw UndefinedLossError("bce_loss: zero valid positions");
  const double n = (double)terms.size();
  return stable_sum(std::move(terms)) / n;
}

// Dice loss: 1 - (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps), eps = 1.
inline double dice_loss(const std::vector<double>& pred,
                        const std::vector<double>& gt,
                        const std::vector<double>& valid, double eps = 1.0) {
  if (pred.size() != gt.size() || pred.size() != valid.size())
    throw ArgumentError("dice_loss shape mismatch");
  std::vector<double> inter_t, sp_t, sg_t;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (valid[i] == 0.0) continue;
    inter_t.push_back(pred[i] * gt[i]);
    sp_t.push_back(pred[i]);
    sg_t.push_back(gt[i]);
  }
  const double inter = stable_sum(std::move(inter_t));
  const double sp = stable_sum(std::move(sp_t));
  const double sg = stable_sum(std::move(sg_t));
  return 1.0 - (2.0 * inter + eps) / (sp + sg + eps);
}

// Mean token-level cross-entropy over non-pad positions from raw logits.
inline double text_loss(const std::vector<std::vector<double>>& logits,
                        const std::vector<std::int64_t>& target,
                        std::int64_t pad_id) {
  if (logits.size() != target.size())
    throw ArgumentError("text_loss length mismatch");
  double sum = 0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == pad_id) continue;
    const auto& row = logits[i];
    if (target[i] < 0 || target[i] >= (std::int64_t)row.size())
      throw ArgumentError("text_loss target id out of range");
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double lse = 0;
    for (double v : row) lse += std::exp(v - mx);
    lse = mx + std::log(lse);
    sum += lse - row[(std::size_t)target[i]];
    ++n;
  }
  if (n == 0) throw UndefinedLossError("text_loss: all-pad target");
  return sum / (double)n;
}

// IoU averaged over the threshold sweep {0.01, 0.02, ..., 0.99}.
// Undefined (nullopt) when gt has no positives.
inline std::optional<double> miou(const std::vector<double>& pred,
                                  const std::vector<double>& gt) {
  if (pred.size() != gt.size()) throw ArgumentError("miou shape mismatch");
  bool any_pos = false;
  for (double g : gt)
    if (g != 0.0) any_pos = true;
  if (!any_pos) return std::nullopt;
  double total = 0;
  int count = 0;
  for (int ti = 1; ti <= 99; ++ti) {
    const double t = (double)ti / 100.0;
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i] >= t;
      const bool g = gt[i] != 0.0;
      if (p && g)
        ++tp;
      else if (p && !g)
        ++fp;
      else if (!p && g)
        ++fn;
    }
    total += (tp + fp + fn) == 0 ? 1.0 : (double)tp / (double)(tp + fp + fn);
    ++count;
  }
  return total / (double)count;
}

// Single-threshold IoU (exposed behind the CLI --iou-threshold switch).
inline std::optional<double> iou_at(const std::vector<double>& pred,
                                    const std::vector<double>& gt, double t) {
  if (pred.size() != gt.size()) throw ArgumentError("iou shape mismatch");
  bool any_pos = false;
  for (double g : gt)
    if (g != 0.0) any_pos = true;
  if (!any_pos) return std::nullopt;
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= t;
    const bool g = gt[i] != 0.0;
    if (p && g)
      ++tp;
    else if (p && !g)
      ++fp;
    else if (!p && g)
      ++fn;
  }
  return (tp + fp + fn) == 0 ? 1.0 : (double)tp / (double)(tp + fp + fn);
}

// ROC area via the rank statistic: P(score_pos > score_neg) + 0.5 P(tie).
// Undefined when gt is single-class.
inline std::optional<double> auc(const std::vector<double>& pred,
                                 const std::vector<double>& gt) {
  if (pred.size() != gt.size()) throw ArgumentError("auc shape mismatch");
  const std::size_t n = pred.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return pred[a] < pred[b]; });
  std::vector<double> rank(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && pred[order[j + 1]] == pred[order[i]]) ++j;
    const double mid = 0.5 * (double)(i + j) + 1.0;  // 1-based midrank
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = mid;
    i = j + 1;
  }
  std::vector<double> pos_ranks;
  std::int64_t n_pos = 0, n_neg = 0;
  for (std::size_t t = 0; t < n; ++t) {
    if (gt[t] != 0.0) {
      pos_ranks.push_back(rank[t]);
      ++n_pos;
    } else {
      ++n_neg;
    }
  }
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double pos_rank_sum = stable_sum(std::move(pos_ranks));
  return (pos_rank_sum - (double)n_pos * ((double)n_pos + 1.0) / 2.0) /
         ((double)n_pos * (double)n_neg);
}

// Histogram intersection after normalizing both maps to unit mass.
inline std::optional<double> sim(const std::vector<double>& pred,
                                 const std::vector<double>& gt) {
  if (pred.size() != gt.size()) throw ArgumentError("sim shape mismatch");
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] < 0 || gt[i] < 0)
      throw ArgumentError("sim requires non-negative maps");
  const double sp = stable_sum(pred);
  const double sg = stable_sum(gt);
  if (sp <= 0.0 || sg <= 0.0) return std::nullopt;
  std::vector<double> terms(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i)
    terms[i] = std::min(pred[i] / sp, gt[i] / sg);
  return stable_sum(std::move(terms));
}

inline double mae(const std::vector<double>& pred,
                  const std::vector<double>& gt) {
  if (pred.size() != gt.size()) throw ArgumentError("mae shape mismatch");
  if (pred.empty()) throw ArgumentError("mae of empty vectors");
  std::vector<double> terms(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i)
    terms[i] = std::abs(pred[i] - gt[i]);
  return stable_sum(std::move(terms)) / (double)pred.size();
}

// KL(gt || pred) on unit-mass maps; terms with gt_i = 0 contribute zero.
inline std::optional<double> kld(const std::vector<double>& pred,
                                 const std::vector<double>& gt,
                                 double eps = 1e-12) {
  if (pred.size() != gt.size()) throw ArgumentError("kld shape mismatch");
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] < 0 || gt[i] < 0)
      throw ArgumentError("kld requires non-negative maps");
  const double sp = stable_sum(pred);
  const double sg = stable_sum(gt);
  if (sp <= 0.0 || sg <= 0.0) return std::nullopt;
  std::vector<double> terms;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double g = gt[i] / sg;
    if (g == 0.0) continue;
    terms.push_back(g * std::log(g / (pred[i] / sp + eps)));
  }
  return stable_sum(std::move(terms));
}

}  // namespace affordsplat::evalkit
