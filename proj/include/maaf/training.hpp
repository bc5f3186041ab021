#pragma once

#include <optional>
#include <string>
#include <vector>

#include "maaf/config.hpp"
#include "maaf/css.hpp"
#include "maaf/image_cache.hpp"
#include "maaf/model.hpp"

namespace maaf {

// Batch classification loss: mean over i of
// -log softmax_j(dot(q_i, t_j))[i], dots taken on the scaled embeddings.
Tensor batch_loss(const Tensor& queries, const Tensor& targets);

// learning rate for a group at a step: base * schedule(step) / 10^(step/decay)
real learning_rate(real base, const TrainConfig& cfg, int step);

// Deterministic function of (dataset size, cfg, step): uniform without
// replacement within an epoch; per-category batches cycle categories
// round-robin. Categories smaller than the batch fall back to sampling
// with replacement.
std::vector<std::size_t> make_batch(const DatasetManifest& data,
                                    const TrainConfig& cfg, int step);

// SGD with momentum; buffers are aligned with the ParamStore entries.
struct OptimizerState {
  std::vector<std::vector<real>> momentum;
};

OptimizerState make_optimizer_state(const Model& m);
void sgd_step(Model& m, OptimizerState& opt, const TrainConfig& cfg,
              int step);

struct TrainStatus {
  int step = 0;
  real last_loss = 0;
};

// Runs steps [start_step, max_steps). Deterministic given seed and
// starting state; aborts with a diagnostic on NaN loss.
TrainStatus train(Model& m, OptimizerState& opt, Rng& rng,
                  const DatasetManifest& data, const TrainConfig& cfg,
                  int start_step, const std::string& metrics_path,
                  ImageCache* cache = nullptr);

// Checkpoint: magic "MAAFCKPT", u32 version, u64 header length, JSON
// header (config, vocab, step, rng, tensor directory), raw little-endian
// payloads. Payload dtype follows the build's scalar width so that
// save -> load -> resume is bit-exact.
void save_checkpoint(const std::string& path, const Model& m,
                     const OptimizerState& opt, const RunConfig& run_cfg,
                     int step, const Rng& rng);

struct LoadedCheckpoint {
  Model model;
  OptimizerState opt;
  RunConfig run_cfg;
  int step = 0;
  Rng rng;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace maaf
