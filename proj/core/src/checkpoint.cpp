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

#include "r3/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace r3::io {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'R', '3', 'C', 'K'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view bytes, std::size_t pos) {
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  return v;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void atomic_write(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string serialize_checkpoint(const Checkpoint& ckpt, std::uint32_t version) {
  nlohmann::ordered_json tensors = nlohmann::ordered_json::object();
  std::string payload;
  for (const auto& [name, t] : ckpt.params) {
    tensors[name] = {{"shape", t.shape()}, {"offset", payload.size()}};
    for (double v : t.data()) put(payload, static_cast<float>(v));
  }
  nlohmann::ordered_json header;
  header["tensors"] = std::move(tensors);
  header["payload_bytes"] = payload.size();
  header["meta"] = ckpt.meta;
  const std::string hdr = header.dump();

  std::string out(kMagic, 4);
  put(out, version);
  put(out, static_cast<std::uint64_t>(hdr.size()));
  out += hdr;
  out += payload;
  put(out, fnv1a64(payload));
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("bad magic: not an R3CK file");
  const auto version = get<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto hdr_len = get<std::uint64_t>(bytes, 8);
  if (hdr_len > bytes.size() - 16) throw CheckpointError("truncated checkpoint: header extends past end of file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, hdr_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const std::size_t payload_start = 16 + hdr_len;
  const auto payload_bytes = header.value("payload_bytes", std::uint64_t{0});
  if (payload_start + payload_bytes + 8 != bytes.size()) {
    throw CheckpointError("checksum error: file size does not match header (truncated or padded)");
  }
  const auto payload = bytes.substr(payload_start, payload_bytes);
  if (fnv1a64(payload) != get<std::uint64_t>(bytes, payload_start + payload_bytes)) {
    throw CheckpointError("checksum error: payload checksum mismatch");
  }
  Checkpoint ckpt;
  try {
    // Re-parse preserving key order so tensors come back in payload order.
    const auto ordered = nlohmann::ordered_json::parse(bytes.substr(16, hdr_len));
    for (const auto& [name, info] : ordered.at("tensors").items()) {
      const auto shape = info.at("shape").get<std::vector<std::size_t>>();
      const auto offset = info.at("offset").get<std::size_t>();
      std::size_t count = 1;
      for (auto d : shape) count *= d;
      if (offset + count * 4 > payload.size()) throw CheckpointError("tensor " + name + " extends past payload");
      std::vector<double> data(count);
      for (std::size_t i = 0; i < count; ++i) data[i] = get<float>(payload, offset + 4 * i);
      ckpt.params.add(name, nn::Tensor(shape, std::move(data)));
    }
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  ckpt.meta = header.value("meta", nlohmann::json::object());
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  atomic_write(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
  return parse_checkpoint(bytes);
}

nlohmann::json model_config_to_json(const train::ModelConfig& c) {
  auto policy = [](const text::PolicyConfig& p) {
    return nlohmann::json{{"embed_dim", p.embed_dim}, {"hidden_dim", p.hidden_dim}, {"proj_hidden", p.proj_hidden}};
  };
  return {{"planner", policy(c.planner)},
          {"reflector", policy(c.reflector)},
          {"generator_hidden", c.generator_hidden},
          {"editor_hidden", c.editor_hidden}};
}

train::ModelConfig model_config_from_json(const nlohmann::json& j) {
  auto policy = [](const nlohmann::json& p) {
    text::PolicyConfig c;
    c.embed_dim = p.at("embed_dim").get<int>();
    c.hidden_dim = p.at("hidden_dim").get<int>();
    c.proj_hidden = p.at("proj_hidden").get<int>();
    return c;
  };
  train::ModelConfig c;
  c.planner = policy(j.at("planner"));
  c.reflector = policy(j.at("reflector"));
  c.generator_hidden = j.at("generator_hidden").get<std::vector<int>>();
  c.editor_hidden = j.at("editor_hidden").get<std::vector<int>>();
  return c;
}

void save_models(const train::R3Models& models, const train::ModelConfig& config, const std::filesystem::path& path,
                 nlohmann::json extra_meta) {
  Checkpoint ckpt{models.flatten(), std::move(extra_meta)};
  ckpt.meta["model"] = model_config_to_json(config);
  save_checkpoint(ckpt, path);
}

train::R3Models load_models(const std::filesystem::path& path, train::ModelConfig* config_out) {
  const auto ckpt = load_checkpoint(path);
  train::ModelConfig config;
  try {
    config = model_config_from_json(ckpt.meta.at("model"));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint lacks a valid model description: ") + e.what());
  }
  auto models = train::make_models(config, 0);
  try {
    models.assign(ckpt.params);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(e.what());
  }
  if (config_out) *config_out = config;
  return models;
}

}  // namespace r3::io
