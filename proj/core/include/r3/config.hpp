// Copyright 2026 The R3 Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// JSON run configuration. Sections mirror the modules; every key is optional
// and unknown keys are errors.
//
//   {
//     "seed": 0, "out_dir": "runs/default", "checkpoint_interval": 50,
//     "model":     {"generator_hidden": [256, 256], "editor_hidden": [...], "planner": {...}, "reflector": {...}},
//     "pretrain":  {"generator_steps": ..., "editor_steps": ..., ...},
//     "train":     {"prompt_batch": 16, "group_size": 16, "mode": "tree", ...},
//     "sampler":   {"reason": {"num_steps": 10, "noise_scale": 0.7, ...}, "edit": {...}},
//     "rl":        {"clip_eps": 0.2, "kl_text": 0.0005, ...},
//     "inference": {"greedy_text": true, "reason_noise": 0.0, "edit_noise": 0.0, ...},
//     "eval":      {"prompts": 200, "budgets": [0, 1, 2, 4], "max_turns": 2, "probe_pairs": 2000}
//   }

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "r3/pipeline.hpp"
#include "r3/treerl.hpp"

namespace r3::io {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EvalSettings {
  int prompts = 200;
  std::vector<int> budgets{0, 1, 2, 4};
  int max_turns = 2;
  int probe_pairs = 2000;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  int checkpoint_interval = 50;
  train::ModelConfig model;
  train::PretrainConfig pretrain;
  train::TrainConfig train = [] {
    train::TrainConfig t;
    t.steps = 300;
    return t;
  }();
  pipeline::InferenceConfig inference;
  EvalSettings eval;

  /// Throws ConfigError.
  void validate() const;
};

/// Throws ConfigError on unknown keys, wrong types or invalid values.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& config);
/// Throws ConfigError naming the path when it cannot be read or parsed.
RunConfig load_config(const std::filesystem::path& path);

}  // namespace r3::io
