#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "affordsplat/affordnet/config.hpp"
#include "affordsplat/core/errors.hpp"
#include "affordsplat/datagen/splits.hpp"

namespace affordsplat::harness {

// Flat key-value experiment configuration. Every field can come from the
// --config JSON document or a CLI override.
struct ExperimentConfig {
  std::string stage;
  std::string data_dir;
  std::string out_dir = "out";
  std::string init_checkpoint;
  std::string split_mode = "Seen";
  std::int64_t K = 4;
  double tau = 0.1;
  double lr = -1.0;        // stage default when negative
  std::int64_t epochs = -1;  // stage default when negative
  std::int64_t batch_size = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::int64_t eval_questions = 3;
  bool iou_sweep = true;
  double iou_threshold = 0.5;

  // datagen fields
  std::int64_t objects_per_category = 4;
  std::int64_t n_points = 2048;
  std::int64_t n_gaussians_min = 256;
  std::int64_t n_gaussians_max = 512;
  double jitter = 0.02;

  affordnet::ModelConfig model;

  double stage_lr() const {
    if (lr > 0) return lr;
    return stage == "pretrain" ? 1e-5 : 1e-4;
  }
  std::int64_t stage_epochs() const {
    if (epochs >= 0) return epochs;
    return stage == "pretrain" ? 1 : 60;
  }

  void validate() const {
    if (stage.empty()) throw ConfigError("stage is required");
    if (stage == "pretrain" || stage == "finetune") {
      if (!seed_set) throw ConfigError("--seed is mandatory for train stages");
      if (data_dir.empty()) throw ConfigError("data directory is required");
    }
    if (K < 1) throw ConfigError("K must be >= 1");
    if (tau <= 0) throw ConfigError("tau must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    model.validate();
  }
};

inline void apply_json(ExperimentConfig& cfg, const nlohmann::json& j) {
  auto geti = [&](const char* k, std::int64_t& dst) {
    if (j.contains(k)) dst = j.at(k).get<std::int64_t>();
  };
  auto getd = [&](const char* k, double& dst) {
    if (j.contains(k)) dst = j.at(k).get<double>();
  };
  auto gets = [&](const char* k, std::string& dst) {
    if (j.contains(k)) dst = j.at(k).get<std::string>();
  };
  gets("stage", cfg.stage);
  gets("data", cfg.data_dir);
  gets("out", cfg.out_dir);
  gets("init", cfg.init_checkpoint);
  gets("split", cfg.split_mode);
  geti("K", cfg.K);
  getd("tau", cfg.tau);
  getd("lr", cfg.lr);
  geti("epochs", cfg.epochs);
  geti("batch_size", cfg.batch_size);
  getd("beta1", cfg.beta1);
  getd("beta2", cfg.beta2);
  getd("weight_decay", cfg.weight_decay);
  if (j.contains("seed")) {
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.seed_set = true;
  }
  geti("eval_questions", cfg.eval_questions);
  if (j.contains("iou_sweep")) cfg.iou_sweep = j.at("iou_sweep").get<bool>();
  getd("iou_threshold", cfg.iou_threshold);
  geti("objects_per_category", cfg.objects_per_category);
  geti("n_points", cfg.n_points);
  geti("n_gaussians_min", cfg.n_gaussians_min);
  geti("n_gaussians_max", cfg.n_gaussians_max);
  getd("jitter", cfg.jitter);
  geti("d", cfg.model.d);
  if (j.contains("d_text")) {
    cfg.model.d_text = j.at("d_text").get<std::int64_t>();
    cfg.model.text.d_text = cfg.model.d_text;
  }
  if (j.contains("granularity_sizes")) {
    auto a = j.at("granularity_sizes");
    for (int i = 0; i < 3; ++i)
      cfg.model.granularity_sizes[(std::size_t)i] = a.at((std::size_t)i).get<std::int64_t>();
  }
  if (j.contains("heads")) cfg.model.heads = j.at("heads").get<int>();
  if (j.contains("text_heads")) cfg.model.text.heads = j.at("text_heads").get<int>();
  if (j.contains("encoder_refine_layers"))
    cfg.model.encoder_refine_layers = j.at("encoder_refine_layers").get<int>();
  if (j.contains("decoder_layers"))
    cfg.model.decoder_layers = j.at("decoder_layers").get<int>();
  geti("idw_k", cfg.model.idw_k);
  getd("idw_power", cfg.model.idw_power);
  geti("group_k", cfg.model.group_k);
  geti("d_consis", cfg.model.d_consis);
  geti("cmsa_width", cfg.model.cmsa_width);
  geti("cmsa_tokens", cfg.model.cmsa_tokens);
  if (j.contains("cmsa_heads")) cfg.model.cmsa_heads = j.at("cmsa_heads").get<int>();
  cfg.model.tau = cfg.tau;
}

inline nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["stage"] = cfg.stage;
  j["data"] = cfg.data_dir;
  j["out"] = cfg.out_dir;
  j["init"] = cfg.init_checkpoint;
  j["split"] = cfg.split_mode;
  j["K"] = cfg.K;
  j["tau"] = cfg.tau;
  j["lr"] = cfg.stage_lr();
  j["epochs"] = cfg.stage_epochs();
  j["batch_size"] = cfg.batch_size;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["weight_decay"] = cfg.weight_decay;
  j["seed"] = cfg.seed;
  j["eval_questions"] = cfg.eval_questions;
  j["iou_sweep"] = cfg.iou_sweep;
  j["iou_threshold"] = cfg.iou_threshold;
  j["objects_per_category"] = cfg.objects_per_category;
  j["n_points"] = cfg.n_points;
  j["n_gaussians_min"] = cfg.n_gaussians_min;
  j["n_gaussians_max"] = cfg.n_gaussians_max;
  j["jitter"] = cfg.jitter;
  j["d"] = cfg.model.d;
  j["d_text"] = cfg.model.d_text;
  j["granularity_sizes"] = cfg.model.granularity_sizes;
  j["heads"] = cfg.model.heads;
  j["text_heads"] = cfg.model.text.heads;
  j["encoder_refine_layers"] = cfg.model.encoder_refine_layers;
  j["decoder_layers"] = cfg.model.decoder_layers;
  j["idw_k"] = cfg.model.idw_k;
  j["idw_power"] = cfg.model.idw_power;
  j["group_k"] = cfg.model.group_k;
  j["d_consis"] = cfg.model.d_consis;
  j["cmsa_width"] = cfg.model.cmsa_width;
  j["cmsa_tokens"] = cfg.model.cmsa_tokens;
  j["cmsa_heads"] = cfg.model.cmsa_heads;
  return j;
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  ExperimentConfig cfg;
  apply_json(cfg, j);
  return cfg;
}

}  // namespace affordsplat::harness
