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

// Inference loop (plan, generate, then reflect/refine until the reflector
// emits NoEdit or the turn budget runs out), generation evaluation, turn
// scaling curves and the ITA / VQA understanding probes.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "r3/edit.hpp"
#include "r3/scenes.hpp"
#include "r3/textpolicy.hpp"
#include "r3/treerl.hpp"

namespace r3::pipeline {

/// The four policy calls of the loop. Implementations must not look at the
/// verifier; traces record scores for reporting only.
class Agent {
 public:
  virtual ~Agent() = default;
  virtual std::vector<text::Token> plan(const scenes::PromptSpec& prompt, nn::Rng& rng) const = 0;
  virtual scenes::SceneLatent generate(const scenes::PromptSpec& prompt, const std::vector<text::Token>& plan,
                                       nn::Rng& rng) const = 0;
  virtual std::vector<text::Token> reflect(const scenes::PromptSpec& prompt, const scenes::SceneLatent& latent,
                                           nn::Rng& rng) const = 0;
  virtual scenes::SceneLatent refine(const scenes::SceneLatent& latent, const EditInstruction& edit,
                                     nn::Rng& rng) const = 0;
};

struct InferenceConfig {
  train::StageSamplers samplers{{10, 0.0, 0, -1, 1.5, 0.0}, {20, 0.0, 0, -1, 1.5, 0.0}};
  bool greedy_text = true;
  double temperature = 0.9;  // used only when greedy_text is false
};

class ModelAgent final : public Agent {
 public:
  ModelAgent(const train::R3Models& models, InferenceConfig config = {});
  std::vector<text::Token> plan(const scenes::PromptSpec& prompt, nn::Rng& rng) const override;
  scenes::SceneLatent generate(const scenes::PromptSpec& prompt, const std::vector<text::Token>& plan,
                               nn::Rng& rng) const override;
  std::vector<text::Token> reflect(const scenes::PromptSpec& prompt, const scenes::SceneLatent& latent,
                                   nn::Rng& rng) const override;
  scenes::SceneLatent refine(const scenes::SceneLatent& latent, const EditInstruction& edit,
                             nn::Rng& rng) const override;

 private:
  const train::R3Models& models_;
  InferenceConfig config_;
};

enum class Termination { kNoEdit, kMaxTurns };
std::string name_of(Termination t);

struct TraceTurn {
  std::vector<text::Token> reflection;
  EditInstruction edit = edit::NoEdit{};
  scenes::SceneLatent latent;  // after this turn (unchanged when no refine ran)
  double v = 0.0;
};

struct R3Trace {
  scenes::PromptSpec prompt;
  std::vector<text::Token> plan;
  scenes::SceneLatent initial_latent;
  double initial_v = 0.0;
  std::vector<TraceTurn> turns;
  Termination termination = Termination::kMaxTurns;
  bool invalid_parse = false;

  int turn_count() const { return static_cast<int>(turns.size()); }
  const scenes::SceneLatent& final_latent() const { return turns.empty() ? initial_latent : turns.back().latent; }
  double final_v() const { return turns.empty() ? initial_v : turns.back().v; }
};

/// Throws std::invalid_argument for negative max_turns.
R3Trace infer_r3(const Agent& agent, const scenes::PromptSpec& prompt, int max_turns, nn::Rng& rng);

/// Line-oriented text form of a trace.
void write_trace(std::ostream& os, const R3Trace& trace);
std::string format_trace(const R3Trace& trace);

struct EvalReport {
  std::map<scenes::Category, double> category_mean;
  std::map<scenes::Category, int> category_count;
  double overall = 0.0;
  std::vector<int> budgets;
  std::vector<double> budget_scores;
  double noedit_rate = 0.0;  // fraction of traces that stopped on NoEdit
  double invalid_rate = 0.0;
  double mean_turns = 0.0;
  int prompts = 0;
};

/// Per-prompt generators are seeded from (seed, prompt index) so every budget
/// sees the same reason-stage samples. Throws for an empty eval set.
EvalReport evaluate_generation(const Agent& agent, const std::vector<scenes::PromptSpec>& eval_set, int max_turns,
                               std::uint64_t seed);

/// Budgets must be sorted ascending.
std::vector<double> scaling_curve(const Agent& agent, const std::vector<scenes::PromptSpec>& eval_set,
                                  const std::vector<int>& budgets, std::uint64_t seed);

/// `n` held-out prompts drawn from a fixed stream.
std::vector<scenes::PromptSpec> held_out_prompts(int n, std::uint64_t seed);

void write_report_csv(std::ostream& os, const EvalReport& report);

enum class ProbeMode { kIta, kVqa };
std::string name_of(ProbeMode m);
ProbeMode parse_probe_mode(const std::string& s);

struct ProbeResult {
  double accuracy = 0.0;
  int n = 0;
  /// Fraction of ground-truth positives judged positive (NoEdit on aligned /
  /// "yes" questions).
  double positive_recall = 0.0;
  double negative_recall = 0.0;
};

/// Half aligned and half misaligned pairs; the agent says "aligned" iff its
/// reflection parses to NoEdit. Throws unless n_pairs >= 2 and even.
ProbeResult understanding_probe(const Agent& agent, int n_pairs, ProbeMode mode, std::uint64_t seed);

}  // namespace r3::pipeline
