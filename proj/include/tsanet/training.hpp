// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tsanet/model.hpp"

namespace tsanet {

struct TrainConfig {
  double learning_rate = 1e-4;  // desk-scale default; 1e-5 selectable
  int iterations = 500;
  std::vector<int> scales = {64, 96, 128};  // square sizes, divisible by 32
  int batch_size = 1;
  uint64_t seed = 0;
  int switch_every = 128;
  bool taf_enabled = true;
  bool sad_enabled = true;
  bool target_residual = false;

  ModelFlags flags() const {
    return ModelFlags{taf_enabled, sad_enabled, target_residual};
  }
  std::string echo() const;  // "key=value" lines
};

TrainConfig parse_train_config(const std::map<std::string, std::string>& kv);

/// Bias-corrected Adam (beta1 0.9, beta2 0.999, eps 1e-8). Moment buffers
/// are created lazily per parameter and stored in the parameter dtype.
struct AdamState {
  int64_t step = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments;  // name -> (m, v)
};

/// One update over every named parameter, reading gradients populated by
/// the last backward pass (absent gradients count as zero). Non-finite
/// gradients abort with the parameter name.
void adam_step(const std::vector<std::pair<std::string, Tensor*>>& params,
               AdamState& state, double lr);

struct Checkpoint {
  uint32_t version = 1;
  std::vector<std::pair<std::string, Tensor>> params;
  std::map<std::string, std::pair<Tensor, Tensor>> moments;
  int64_t adam_step = 0;
  int64_t iteration = 0;
  ModelFlags flags;
  std::string config_echo;  // persisted separately as text, not in the binary
};

/// Binary layout: magic "TSCK", u32 version, u32 entry count; each entry is
/// u16 name length, name bytes, u8 ndim, u32 dims, then little-endian f32
/// values. Optimizer moments follow the parameters under ".m"/".v" names;
/// iteration, Adam step and ablation flags ride along as "__meta.*" scalars.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds the model (and optionally optimizer state) from a checkpoint.
ModelParams model_from_checkpoint(const Checkpoint& ckpt);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;
};

/// Joint training over one or more dataset roots: per iteration, draw a
/// window, pick a scale, forward, cross-entropy at full scale resolution,
/// backward, Adam. Logs "iter <k> loss <v>" lines to out_dir/loss.log and
/// writes the checkpoint every 500 iterations and at exit.
TrainResult train(const TrainConfig& cfg,
                  const std::vector<std::filesystem::path>& data_roots,
                  const std::filesystem::path& out_dir);

}  // namespace tsanet
