#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "affordsplat/core/errors.hpp"
#include "affordsplat/evalkit/metrics.hpp"

namespace affordsplat::evalkit {

struct SampleKey {
  std::string id;
  std::string category;
  std::string affordance;
  std::string split;
};

struct SampleMetrics {
  SampleKey key;
  std::optional<double> miou;
  std::optional<double> auc;
  std::optional<double> sim;
  std::optional<double> kld;
  double mae = 0.0;
};

struct MetricAggregate {
  double miou = 0, auc = 0, sim = 0, kld = 0, mae = 0;
  std::int64_t n_miou = 0, n_auc = 0, n_sim = 0, n_kld = 0, n_mae = 0;
  std::int64_t skipped_miou = 0, skipped_auc = 0, skipped_sim = 0,
               skipped_kld = 0;

  void accumulate(const SampleMetrics& s) {
    if (s.miou) {
      miou += *s.miou;
      ++n_miou;
    } else {
      ++skipped_miou;
    }
    if (s.auc) {
      auc += *s.auc;
      ++n_auc;
    } else {
      ++skipped_auc;
    }
    if (s.sim) {
      sim += *s.sim;
      ++n_sim;
    } else {
      ++skipped_sim;
    }
    if (s.kld) {
      kld += *s.kld;
      ++n_kld;
    } else {
      ++skipped_kld;
    }
    mae += s.mae;
    ++n_mae;
  }

  void finalize() {
    if (n_miou) miou /= (double)n_miou;
    if (n_auc) auc /= (double)n_auc;
    if (n_sim) sim /= (double)n_sim;
    if (n_kld) kld /= (double)n_kld;
    if (n_mae) mae /= (double)n_mae;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["miou"] = miou;
    j["auc"] = auc;
    j["sim"] = sim;
    j["kld"] = kld;
    j["mae"] = mae;
    j["count"] = n_mae;
    j["skipped"] = {{"miou", skipped_miou},
                    {"auc", skipped_auc},
                    {"sim", skipped_sim},
                    {"kld", skipped_kld}};
    return j;
  }
};

struct MetricReport {
  std::vector<SampleMetrics> samples;
  MetricAggregate overall;
  std::map<std::string, MetricAggregate> by_affordance;
  std::map<std::string, MetricAggregate> by_category;
  std::string split_mode;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["split_mode"] = split_mode;
    j["overall"] = overall.to_json();
    nlohmann::ordered_json aff = nlohmann::ordered_json::object();
    for (const auto& [k, v] : by_affordance) aff[k] = v.to_json();
    j["by_affordance"] = aff;
    nlohmann::ordered_json cat = nlohmann::ordered_json::object();
    for (const auto& [k, v] : by_category) cat[k] = v.to_json();
    j["by_category"] = cat;
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& s : samples) {
      nlohmann::ordered_json e;
      e["id"] = s.key.id;
      e["category"] = s.key.category;
      e["affordance"] = s.key.affordance;
      if (s.miou) e["miou"] = *s.miou;
      if (s.auc) e["auc"] = *s.auc;
      if (s.sim) e["sim"] = *s.sim;
      if (s.kld) e["kld"] = *s.kld;
      e["mae"] = s.mae;
      arr.push_back(e);
    }
    j["samples"] = arr;
    return j;
  }
};

// Computes every metric for aligned prediction/ground-truth lists and folds
// them into overall / per-affordance / per-category aggregates. Samples where
// a metric is undefined are excluded from that metric's mean and counted.
inline MetricReport evaluate_dataset(
    const std::vector<std::vector<double>>& predictions,
    const std::vector<std::vector<double>>& ground_truths,
    const std::vector<SampleKey>& keys, bool sweep_iou = true,
    double iou_threshold = 0.5) {
  if (predictions.size() != ground_truths.size() ||
      predictions.size() != keys.size())
    throw AlignmentError("evaluate_dataset: misaligned id lists");
  MetricReport r;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].size() != ground_truths[i].size())
      throw AlignmentError("evaluate_dataset: sample " + keys[i].id +
                                 " length mismatch");
    SampleMetrics s;
    s.key = keys[i];
    s.miou = sweep_iou ? miou(predictions[i], ground_truths[i])
                       : iou_at(predictions[i], ground_truths[i], iou_threshold);
    s.auc = auc(predictions[i], ground_truths[i]);
    s.sim = sim(predictions[i], ground_truths[i]);
    s.kld = kld(predictions[i], ground_truths[i]);
    s.mae = mae(predictions[i], ground_truths[i]);
    r.samples.push_back(std::move(s));
  }
  for (const auto& s : r.samples) {
    r.overall.accumulate(s);
    r.by_affordance[s.key.affordance].accumulate(s);
    r.by_category[s.key.category].accumulate(s);
  }
  r.overall.finalize();
  for (auto& [k, v] : r.by_affordance) v.finalize();
  for (auto& [k, v] : r.by_category) v.finalize();
  return r;
}

}  // namespace affordsplat::evalkit
