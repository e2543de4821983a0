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

// R3CK checkpoint files:
//   "R3CK" | u32 version | u64 header length | JSON header | f32 payload | u64 FNV-1a of payload
// All integers little-endian. The header maps tensor name to shape and byte
// offset (in payload order) and carries free-form metadata.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "r3/nncore.hpp"
#include "r3/treerl.hpp"

namespace r3::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  nn::ParamSet params;
  nlohmann::json meta = nlohmann::json::object();
};

std::uint64_t fnv1a64(std::string_view bytes);

/// Writes to a temporary sibling and renames over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

std::string serialize_checkpoint(const Checkpoint& ckpt, std::uint32_t version = kCheckpointVersion);
/// Throws CheckpointError naming the defect (magic, version, truncation,
/// checksum, header).
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json model_config_to_json(const train::ModelConfig& config);
train::ModelConfig model_config_from_json(const nlohmann::json& j);

/// Model checkpoints record their ModelConfig under meta["model"].
void save_models(const train::R3Models& models, const train::ModelConfig& config, const std::filesystem::path& path,
                 nlohmann::json extra_meta = nlohmann::json::object());
/// Throws CheckpointError when a tensor is missing or misshapen.
train::R3Models load_models(const std::filesystem::path& path, train::ModelConfig* config_out = nullptr);

}  // namespace r3::io
