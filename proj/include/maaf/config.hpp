#pragma once

#include <string>

#include <json.hpp>

#include "maaf/model.hpp"

namespace maaf {

struct TrainConfig {
  int batch_size = 32;
  real lr_image = real(0.001);
  real lr_other = real(0.01);
  int decay_steps = 2000;  // rate divided by 10 at each boundary
  int max_steps = 6000;
  std::string schedule = "standard";  // standard | half | half+warmup5000
  int warmup_steps = 5000;
  bool per_category_batching = false;
  real momentum = real(0.9);
  std::uint64_t seed = 1;
  int log_interval = 50;
  int eval_interval = 0;  // 0 disables mid-training recall
};

struct DataConfig {
  std::string train_manifest;
  std::string eval_manifest;
  std::string out_dir = "out";
};

// One JSON document covering the whole workflow; unknown keys rejected.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::string& path);

// applies a dotted-path override like "model.d=128" or "train.seed=7"
void apply_override(nlohmann::json& j, const std::string& spec);

}  // namespace maaf
