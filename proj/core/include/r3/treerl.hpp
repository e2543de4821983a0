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

// Stage-split RL orchestration. The Reason stage (planner + generator) fills
// a replay buffer of generated scenes; a reward-diverse subset seeds the
// Reflect-Refine stage (reflector + editor). Also hosts the supervised
// warm-start and the full-trajectory baseline.

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "r3/flowgen.hpp"
#include "r3/nncore.hpp"
#include "r3/rewards.hpp"
#include "r3/rlopt.hpp"
#include "r3/scenes.hpp"
#include "r3/textpolicy.hpp"

namespace r3::train {

inline constexpr int kGeneratorCondDim = 2 * scenes::kFeatureDim;
inline constexpr int kEditorCondDim = scenes::kFeatureDim + scenes::kLatentDim;

struct ModelConfig {
  text::PolicyConfig planner;
  text::PolicyConfig reflector;
  std::vector<int> generator_hidden{256, 256};
  std::vector<int> editor_hidden{256, 256};
};

/// The four trainable heads. Planner and generator form the Reason policy;
/// reflector and editor the Reflect-Refine policy.
struct R3Models {
  text::PolicyModel planner;
  text::PolicyModel reflector;
  flow::FlowModel generator;
  flow::FlowModel editor;

  /// All parameters under "planner.", "reflector.", "generator.", "editor.".
  nn::ParamSet flatten() const;
  /// Inverse of flatten; throws std::invalid_argument on any missing tensor.
  void assign(const nn::ParamSet& all);
};

R3Models make_models(const ModelConfig& config, std::uint64_t seed);

/// [prompt features, plan bag-of-tokens features].
std::vector<double> generator_condition(const scenes::PromptSpec& prompt, const std::vector<text::Token>& plan);
std::vector<double> generator_null_condition();
/// [edit features, source latent]. The null condition keeps the source.
std::vector<double> editor_condition(const EditInstruction& edit, const scenes::SceneLatent& source);
std::vector<double> editor_null_condition(const scenes::SceneLatent& source);
/// The editor's flow runs over the residual (edited - source); these map
/// between the two.
std::vector<double> editor_residual(const scenes::SceneLatent& target, const scenes::SceneLatent& source);
scenes::SceneLatent apply_residual(const scenes::SceneLatent& source, const std::vector<double>& residual);
std::vector<double> planner_condition(const scenes::PromptSpec& prompt);
std::vector<double> reflector_condition(const scenes::PromptSpec& prompt, const scenes::SceneLatent& latent);

struct StageSamplers {
  flow::SamplerConfig reason{10, 0.7, 0, -1, 1.5, 0.0};
  flow::SamplerConfig edit{20, 1.0, 0, -1, 1.5, 0.0};
};

std::uint64_t derive_seed(std::uint64_t run_seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                          std::uint64_t d = 0);

// ---------------------------------------------------------------------------
// Supervised warm-start

struct PretrainConfig {
  int generator_steps = 12000;
  int editor_steps = 30000;
  int planner_steps = 2000;
  int reflector_steps = 3000;
  int flow_batch = 64;
  int text_batch = 32;
  double flow_lr = 1e-3;
  double text_lr = 1e-3;
  double cond_dropout = 0.1;
  /// Cosine decay of every learning rate to zero over each head's budget.
  bool cosine_decay = false;
  /// Fraction of synthetic reflection / edit sources that are perfect scenes.
  double perfect_source_frac = 0.3;
  /// Gaussian noise added to synthetic source latents.
  double source_noise = 0.15;
  /// Fraction of reflector / editor sources sampled from the freshly
  /// pretrained generator instead of synthetic_source.
  double generated_source_frac = 0.5;
  /// Generated sources come from a pool of this many scenes, built from up
  /// to generated_oversample times as many candidates; perfect candidates are
  /// admitted with probability generated_perfect_keep.
  int source_pool = 4096;
  double generated_perfect_keep = 0.25;
  int generated_oversample = 3;
  flow::SamplerConfig source_sampler{10, 0.0, 0, -1, 1.5, 0.0};
};

struct PretrainCurves {
  std::vector<double> generator;
  std::vector<double> editor;
  std::vector<double> planner;
  std::vector<double> reflector;
};

/// A scene of the kind the reflector and editor see at training time: the
/// oracle layout, broken by up to two random edits with probability
/// 1 - perfect_frac, optionally slot-shuffled, plus latent noise.
scenes::SceneLatent synthetic_source(const scenes::PromptSpec& prompt, double perfect_frac, double noise,
                                     nn::Rng& rng);

PretrainCurves pretrain(R3Models& models, const PretrainConfig& config, nn::Rng& rng);

// ---------------------------------------------------------------------------
// RL

enum class Mode { kTree, kFullTrajectory };
std::string name_of(Mode m);
Mode parse_mode(const std::string& s);

struct TrainConfig {
  int prompt_batch = 16;
  int group_size = 16;
  int select_count = 16;
  double perfect_frac = 0.2;
  int steps = 0;
  int trajectory_length = 2;
  Mode mode = Mode::kTree;
  std::uint64_t seed = 0;
  double temperature = 0.9;
  std::size_t buffer_cap = 4096;
  double text_lr = 2e-5;
  double flow_lr = 2e-5;
  /// Empty means uniform over the seven categories.
  std::vector<scenes::Category> category_mix;
  StageSamplers samplers;
  rl::RlConfig rl;

  /// Throws std::invalid_argument.
  void validate() const;
};

struct BufferEntry {
  scenes::PromptSpec prompt;
  scenes::SceneLatent latent;
  double v_hat = 0.0;
  int iteration = 0;
  int member = 0;
};

struct StageRecord {
  rewards::StageKind stage = rewards::StageKind::kReason;
  scenes::PromptSpec prompt;
  std::vector<double> text_cond;
  text::TokenSequence tokens;
  EditInstruction edit = edit::NoEdit{};
  std::optional<flow::PathRecord> path;
  std::optional<scenes::SceneLatent> source;
  scenes::SceneLatent result;
  rewards::RewardBreakdown rewards;
};

struct StageGroup {
  std::vector<StageRecord> records;
  /// Text reward in `text_reward`, flow reward in `flow_reward`.
  rl::GroupBatch batch;
};

struct ReasonRollout {
  std::vector<StageGroup> groups;
  std::vector<BufferEntry> entries;
};

/// G plans per prompt at cfg.temperature, each followed by a generation path.
ReasonRollout rollout_reason(const R3Models& models, const std::vector<scenes::PromptSpec>& prompts,
                             const TrainConfig& cfg, int iteration);

/// round(perfect_frac * select_count) perfect entries when available, the rest
/// stratified over V_hat quartile bins by round-robin. Selected entries leave
/// the buffer.
std::vector<BufferEntry> select_from_buffer(std::deque<BufferEntry>& buffer, const TrainConfig& cfg, nn::Rng& rng);

/// G reflections per entry; real edits run the editor.
std::vector<StageGroup> rollout_reflect_refine(const R3Models& models, const std::vector<BufferEntry>& entries,
                                               const TrainConfig& cfg, int iteration);

struct MetricsRow {
  int step = 0;
  std::string stage;
  double mean_reward = 0.0;
  double mean_v = 0.0;
  double clip_frac = 0.0;
  double kl_text = 0.0;
  double kl_flow = 0.0;
  std::size_t buffer_size = 0;
  double perfect_frac = 0.0;
};

struct TrainState {
  R3Models models;
  R3Models reference;
  nn::AdamState planner_adam;
  nn::AdamState reflector_adam;
  nn::AdamState generator_adam;
  nn::AdamState editor_adam;
  std::deque<BufferEntry> buffer;
  int iteration = 0;
};

TrainState make_train_state(const R3Models& warm_start, const TrainConfig& cfg);

/// Runs one iteration in the configured mode and returns its metrics rows.
std::vector<MetricsRow> train_iteration(TrainState& state, const TrainConfig& cfg);

using IterationHook = std::function<void(const TrainState&, const std::vector<MetricsRow>&)>;

struct TrainResult {
  R3Models models;
  std::vector<MetricsRow> history;
};

/// cfg.steps iterations from `warm_start`. A non-finite update throws
/// std::domain_error; the hook (e.g. checkpointing) has seen every completed
/// iteration before that.
TrainResult train(const R3Models& warm_start, const TrainConfig& cfg, const IterationHook& hook = {});

}  // namespace r3::train
