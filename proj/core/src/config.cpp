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

#include "r3/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace r3::io {
namespace {

using nlohmann::json;

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + qualified(key) + "': " + e.what());
    }
  }

  /// Empty JSON object when absent.
  Section section(const std::string& key) {
    seen_.insert(key);
    static const json kEmpty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : kEmpty, qualified(key));
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + qualified(k) + "'");
    }
  }

 private:
  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_policy(Section s, text::PolicyConfig& p) {
  s.get("embed_dim", p.embed_dim);
  s.get("hidden_dim", p.hidden_dim);
  s.get("proj_hidden", p.proj_hidden);
  s.finish();
}

void read_sampler(Section s, flow::SamplerConfig& c) {
  s.get("num_steps", c.num_steps);
  s.get("noise_scale", c.noise_scale);
  s.get("sde_lo", c.sde_lo);
  s.get("sde_hi", c.sde_hi);
  s.get("guidance", c.guidance);
  s.get("t_clamp", c.t_clamp);
  s.finish();
}

json sampler_json(const flow::SamplerConfig& c) {
  return {{"num_steps", c.num_steps}, {"noise_scale", c.noise_scale}, {"sde_lo", c.sde_lo},
          {"sde_hi", c.sde_hi},       {"guidance", c.guidance},       {"t_clamp", c.t_clamp}};
}

json policy_json(const text::PolicyConfig& p) {
  return {{"embed_dim", p.embed_dim}, {"hidden_dim", p.hidden_dim}, {"proj_hidden", p.proj_hidden}};
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

void RunConfig::validate() const {
  require(!out_dir.empty(), "out_dir must not be empty");
  require(checkpoint_interval >= 0, "checkpoint_interval must be non-negative");
  for (const auto* p : {&model.planner, &model.reflector}) {
    require(p->embed_dim >= 1 && p->hidden_dim >= 1 && p->proj_hidden >= 1, "policy dimensions must be positive");
    require(p->cond_dim == text::kConditionDim, "policy cond_dim is fixed by the environment");
  }
  for (const auto* h : {&model.generator_hidden, &model.editor_hidden}) {
    require(!h->empty(), "flow networks need at least one hidden layer");
    require(std::all_of(h->begin(), h->end(), [](int d) { return d >= 1; }), "hidden sizes must be positive");
  }
  require(pretrain.generator_steps >= 0 && pretrain.editor_steps >= 0 && pretrain.planner_steps >= 0 &&
              pretrain.reflector_steps >= 0,
          "pretrain step counts must be non-negative");
  require(pretrain.flow_batch >= 1 && pretrain.text_batch >= 1, "pretrain batch sizes must be positive");
  require(pretrain.flow_lr > 0.0 && pretrain.text_lr > 0.0, "pretrain learning rates must be positive");
  require(pretrain.cond_dropout >= 0.0 && pretrain.cond_dropout < 1.0, "cond_dropout must be in [0, 1)");
  require(pretrain.perfect_source_frac >= 0.0 && pretrain.perfect_source_frac <= 1.0,
          "perfect_source_frac must be in [0, 1]");
  require(pretrain.source_noise >= 0.0, "source_noise must be non-negative");
  require(pretrain.generated_source_frac >= 0.0 && pretrain.generated_source_frac <= 1.0,
          "generated_source_frac must be in [0, 1]");
  require(pretrain.source_pool >= 1, "source_pool must be positive");
  require(pretrain.generated_perfect_keep >= 0.0 && pretrain.generated_perfect_keep <= 1.0,
          "generated_perfect_keep must be in [0, 1]");
  require(pretrain.generated_oversample >= 1, "generated_oversample must be at least 1");
  try {
    train.validate();
    pretrain.source_sampler.validate();
    inference.samplers.reason.validate();
    inference.samplers.edit.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  require(inference.temperature > 0.0, "inference temperature must be positive");
  require(eval.prompts >= 1, "eval.prompts must be positive");
  require(!eval.budgets.empty(), "eval.budgets must not be empty");
  require(std::is_sorted(eval.budgets.begin(), eval.budgets.end()), "eval.budgets must be sorted ascending");
  require(eval.budgets.front() >= 0, "eval.budgets must be non-negative");
  require(eval.max_turns >= 0, "eval.max_turns must be non-negative");
  require(eval.probe_pairs >= 2 && eval.probe_pairs % 2 == 0, "eval.probe_pairs must be even and at least 2");
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  root.get("out_dir", c.out_dir);
  root.get("checkpoint_interval", c.checkpoint_interval);

  {
    auto s = root.section("model");
    read_policy(s.section("planner"), c.model.planner);
    read_policy(s.section("reflector"), c.model.reflector);
    s.get("generator_hidden", c.model.generator_hidden);
    s.get("editor_hidden", c.model.editor_hidden);
    s.finish();
  }
  {
    auto s = root.section("pretrain");
    auto& p = c.pretrain;
    s.get("generator_steps", p.generator_steps);
    s.get("editor_steps", p.editor_steps);
    s.get("planner_steps", p.planner_steps);
    s.get("reflector_steps", p.reflector_steps);
    s.get("flow_batch", p.flow_batch);
    s.get("text_batch", p.text_batch);
    s.get("flow_lr", p.flow_lr);
    s.get("text_lr", p.text_lr);
    s.get("cond_dropout", p.cond_dropout);
    s.get("perfect_source_frac", p.perfect_source_frac);
    s.get("source_noise", p.source_noise);
    s.get("cosine_decay", p.cosine_decay);
    s.get("generated_source_frac", p.generated_source_frac);
    s.get("source_pool", p.source_pool);
    s.get("generated_perfect_keep", p.generated_perfect_keep);
    s.get("generated_oversample", p.generated_oversample);
    read_sampler(s.section("source_sampler"), p.source_sampler);
    s.finish();
  }
  {
    auto s = root.section("train");
    auto& t = c.train;
    s.get("prompt_batch", t.prompt_batch);
    s.get("group_size", t.group_size);
    s.get("select_count", t.select_count);
    s.get("perfect_frac", t.perfect_frac);
    s.get("steps", t.steps);
    s.get("trajectory_length", t.trajectory_length);
    s.get("temperature", t.temperature);
    s.get("buffer_cap", t.buffer_cap);
    s.get("text_lr", t.text_lr);
    s.get("flow_lr", t.flow_lr);
    std::string mode = train::name_of(t.mode);
    s.get("mode", mode);
    std::vector<std::string> mix;
    s.get("category_mix", mix);
    s.finish();
    try {
      t.mode = train::parse_mode(mode);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("train.mode: ") + e.what());
    }
    for (const auto& name : mix) {
      const auto cat = scenes::parse_category(name);
      if (!cat) throw ConfigError("train.category_mix: unknown category '" + name + "'");
      t.category_mix.push_back(*cat);
    }
  }
  {
    auto s = root.section("sampler");
    read_sampler(s.section("reason"), c.train.samplers.reason);
    read_sampler(s.section("edit"), c.train.samplers.edit);
    s.finish();
  }
  {
    auto s = root.section("rl");
    auto& r = c.train.rl;
    s.get("clip_eps", r.clip_eps);
    s.get("kl_text", r.kl_text);
    s.get("kl_flow", r.kl_flow);
    s.get("adv_delta", r.adv_delta);
    s.get("text_weight", r.text_weight);
    s.get("flow_weight", r.flow_weight);
    s.finish();
  }
  {
    auto s = root.section("inference");
    auto& inf = c.inference;
    double reason_noise = inf.samplers.reason.noise_scale;
    double edit_noise = inf.samplers.edit.noise_scale;
    s.get("greedy_text", inf.greedy_text);
    s.get("temperature", inf.temperature);
    s.get("reason_noise", reason_noise);
    s.get("edit_noise", edit_noise);
    s.finish();
    // Inference shares the training grids and guidance; only the noise differs.
    inf.samplers = c.train.samplers;
    inf.samplers.reason.noise_scale = reason_noise;
    inf.samplers.edit.noise_scale = edit_noise;
  }
  {
    auto s = root.section("eval");
    s.get("prompts", c.eval.prompts);
    s.get("budgets", c.eval.budgets);
    s.get("max_turns", c.eval.max_turns);
    s.get("probe_pairs", c.eval.probe_pairs);
    s.finish();
  }
  root.finish();
  c.train.seed = c.seed;
  c.train.rl.group_size = c.train.group_size;
  c.validate();
  return c;
}

json config_to_json(const RunConfig& c) {
  std::vector<std::string> mix;
  for (auto cat : c.train.category_mix) mix.emplace_back(scenes::name_of(cat));
  const auto& t = c.train;
  const auto& p = c.pretrain;
  return {
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"checkpoint_interval", c.checkpoint_interval},
      {"model",
       {{"planner", policy_json(c.model.planner)},
        {"reflector", policy_json(c.model.reflector)},
        {"generator_hidden", c.model.generator_hidden},
        {"editor_hidden", c.model.editor_hidden}}},
      {"pretrain",
       {{"generator_steps", p.generator_steps},
        {"editor_steps", p.editor_steps},
        {"planner_steps", p.planner_steps},
        {"reflector_steps", p.reflector_steps},
        {"flow_batch", p.flow_batch},
        {"text_batch", p.text_batch},
        {"flow_lr", p.flow_lr},
        {"text_lr", p.text_lr},
        {"cond_dropout", p.cond_dropout},
        {"perfect_source_frac", p.perfect_source_frac},
        {"source_noise", p.source_noise},
        {"cosine_decay", p.cosine_decay},
        {"generated_source_frac", p.generated_source_frac},
        {"source_pool", p.source_pool},
        {"generated_perfect_keep", p.generated_perfect_keep},
        {"generated_oversample", p.generated_oversample},
        {"source_sampler", sampler_json(p.source_sampler)}}},
      {"train",
       {{"prompt_batch", t.prompt_batch},
        {"group_size", t.group_size},
        {"select_count", t.select_count},
        {"perfect_frac", t.perfect_frac},
        {"steps", t.steps},
        {"trajectory_length", t.trajectory_length},
        {"temperature", t.temperature},
        {"buffer_cap", t.buffer_cap},
        {"text_lr", t.text_lr},
        {"flow_lr", t.flow_lr},
        {"mode", train::name_of(t.mode)},
        {"category_mix", mix}}},
      {"sampler", {{"reason", sampler_json(t.samplers.reason)}, {"edit", sampler_json(t.samplers.edit)}}},
      {"rl",
       {{"clip_eps", t.rl.clip_eps},
        {"kl_text", t.rl.kl_text},
        {"kl_flow", t.rl.kl_flow},
        {"adv_delta", t.rl.adv_delta},
        {"text_weight", t.rl.text_weight},
        {"flow_weight", t.rl.flow_weight}}},
      {"inference",
       {{"greedy_text", c.inference.greedy_text},
        {"temperature", c.inference.temperature},
        {"reason_noise", c.inference.samplers.reason.noise_scale},
        {"edit_noise", c.inference.samplers.edit.noise_scale}}},
      {"eval",
       {{"prompts", c.eval.prompts},
        {"budgets", c.eval.budgets},
        {"max_turns", c.eval.max_turns},
        {"probe_pairs", c.eval.probe_pairs}}},
  };
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config file '" + path.string() + "': " + e.what());
  }
  return config_from_json(j);
}

}  // namespace r3::io
