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

// Group-relative policy optimisation for the token policy and the flow
// sampler: standardised group advantages, the clipped importance-ratio
// surrogate with a KL penalty to a frozen reference, and one Adam step per
// policy head per group.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "r3/flowgen.hpp"
#include "r3/nncore.hpp"
#include "r3/textpolicy.hpp"

namespace r3::rl {

struct RlConfig {
  double clip_eps = 0.2;
  double kl_text = 0.0005;
  double kl_flow = 0.005;
  double adv_delta = 1e-6;
  int group_size = 16;
  double text_weight = 1.0;
  double flow_weight = 2.0;

  /// Throws std::invalid_argument unless eps in (0, 1), delta > 0, G >= 2.
  void validate() const;
};

/// (R_i - mean) / (population std + delta).
std::vector<double> group_advantages(std::span<const double> rewards, double delta);

/// Clipped surrogate for one ratio: value and d value / d log-ratio. Throws
/// std::domain_error when the ratio overflows.
struct Surrogate {
  double value = 0.0;
  double grad = 0.0;
  bool clipped = false;
  double ratio = 1.0;
};
Surrogate clipped_surrogate(double logp_new, double logp_old, double adv, double eps);

/// Exact categorical KL(p || q).
double categorical_kl(std::span<const double> p, std::span<const double> q);

using Dist = std::array<double, text::kNumEmittable>;

struct TokenObjective {
  double value = 0.0;
  /// Gradient of value w.r.t. the temperature-scaled logits at every step.
  std::vector<Dist> dlogits;
  double kl = 0.0;
  double clip_fraction = 0.0;
  double mean_ratio = 1.0;
};

/// mean_t min(r_t A, clip(r_t) A) - beta_text * mean_t KL(pi_new || pi_ref).
/// `current` carries the tokens, new log-probs and new distributions; an
/// empty `dists_ref` means no KL term.
TokenObjective token_objective(const text::SequenceEval& current, std::span<const double> logp_old,
                               const std::vector<Dist>& dists_ref, double adv, const RlConfig& cfg);

struct FlowKlTerm {
  std::span<const double> mean_new;
  std::span<const double> mean_ref;
  double std = 1.0;
};

struct FlowObjective {
  double value = 0.0;
  std::vector<double> dlogp;                // per SDE step
  std::vector<std::vector<double>> dmean;   // KL part, per SDE step (empty without KL)
  double kl = 0.0;
  double clip_fraction = 0.0;
  double mean_ratio = 1.0;
};

/// mean_k min(r_k A, clip(r_k) A) - beta_flow * mean_k ||mu_new - mu_ref||^2 / (2 std^2).
/// The same advantage applies at every step.
FlowObjective flow_objective(std::span<const double> logp_new, std::span<const double> logp_old,
                             double adv, const std::vector<FlowKlTerm>& kl_terms, const RlConfig& cfg);

/// One rollout of a group: optional token sample and optional flow path, each
/// with the reward of its own head.
struct GroupMember {
  std::optional<std::vector<double>> text_cond;
  std::optional<text::TokenSequence> text;
  double text_reward = 0.0;
  std::optional<flow::PathRecord> path;
  double flow_reward = 0.0;
};

struct GroupBatch {
  std::string condition_id;
  std::vector<GroupMember> members;
  /// When set, one advantage per member used for every head (full-trajectory
  /// training); otherwise each head standardises its own rewards over the
  /// members that carry a sample for it.
  std::optional<std::vector<double>> shared_advantages;
};

/// Trainable heads touched by one update. Null pointers skip a head.
struct PolicyHeads {
  text::PolicyModel* text = nullptr;
  const text::PolicyModel* text_ref = nullptr;
  nn::AdamState* text_adam = nullptr;
  flow::FlowModel* flow = nullptr;
  const flow::FlowModel* flow_ref = nullptr;
  nn::AdamState* flow_adam = nullptr;
  flow::SamplerConfig flow_sampler;
};

struct UpdateStats {
  double mean_text_reward = 0.0;
  double mean_flow_reward = 0.0;
  double clip_fraction = 0.0;
  double mean_ratio = 1.0;
  double kl_text = 0.0;
  double kl_flow = 0.0;
  int text_samples = 0;
  int flow_samples = 0;
  double text_grad_norm = 0.0;
  double flow_grad_norm = 0.0;
};

/// Accumulates text_weight * (-J_text) + flow_weight * (-J_flow) gradients over
/// the group and applies one Adam step per head that had samples.
UpdateStats policy_update(const GroupBatch& group, PolicyHeads& heads, const RlConfig& cfg);

}  // namespace r3::rl
