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

// Autoregressive categorical policy over the edit-grammar vocabulary.
//
// Cell:   h[k+1] = tanh(W_h h[k] + W_e emb(tok[k]) + W_c c + b),  h[0] = 0
// Head:   logits[k] = W_o h[k+1]   over the 27 emittable tokens
// where c = proj([prompt features, scene latent]) is a small tanh MLP.
//
// PAD and BOS have embeddings but no output logit, so they are never sampled.

#include <array>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "r3/edit.hpp"
#include "r3/nncore.hpp"
#include "r3/scenes.hpp"

namespace r3::text {

enum class Token : int {
  kPad = 0, kBos, kEos, kThinkOpen, kThinkClose, kNoEdit, kSep,
  kAdd, kRemove, kRecolor, kMove, kResize,
  kRed, kGreen, kBlue, kYellow,
  kCircle, kSquare, kTriangle,
  kOne, kTwo, kThree, kFour,
  kLeft, kRight, kAbove, kBelow,
  kBigger, kSmaller,
};

inline constexpr int kVocabSize = 29;
/// Tokens with an output logit: everything except PAD and BOS.
inline constexpr int kNumEmittable = 27;
inline constexpr int kFirstEmittable = 2;
inline constexpr int kDefaultMaxLen = 24;
inline constexpr int kConditionDim = scenes::kFeatureDim + scenes::kLatentDim;

std::string_view token_name(Token t);
std::optional<Token> parse_token(std::string_view name);
inline int emit_index(Token t) { return static_cast<int>(t) - kFirstEmittable; }
inline Token emitted_token(int index) { return static_cast<Token>(index + kFirstEmittable); }

Token count_token(int count);
Token color_token(Color c);
Token shape_token(Shape s);
Token direction_token(Direction d);
Token size_token(SizeChange s);

enum class Stage { kPlan, kReflection };

struct TokenSequence {
  std::vector<Token> tokens;    // excludes the leading BOS
  std::vector<double> logprobs; // per token, under the distribution sampled from
  Stage stage = Stage::kPlan;
  double temperature = 1.0;
};

std::string to_string(const std::vector<Token>& tokens);

struct PolicyConfig {
  int cond_dim = kConditionDim;
  int embed_dim = 16;
  int hidden_dim = 64;
  int proj_hidden = 128;
};

struct PolicyModel {
  PolicyConfig config;
  nn::ParamSet params;

  nn::MlpSpec projection_spec() const;
};

PolicyModel make_policy(const PolicyConfig& config, nn::Rng& rng);

/// [prompt features, latent or zeros]: the raw policy condition.
std::vector<double> condition_input(std::span<const double> prompt_features,
                                    const scenes::SceneLatent* latent);
/// Projection of condition_input into the hidden space (dimension H).
std::vector<double> encode_condition(const PolicyModel& policy,
                                     std::span<const double> prompt_features,
                                     const scenes::SceneLatent* latent);

/// Temperature sampling from BOS until EOS or max_len.
TokenSequence sample_sequence(const PolicyModel& policy, std::span<const double> cond,
                              double temperature, nn::Rng& rng, int max_len = kDefaultMaxLen,
                              Stage stage = Stage::kPlan);
/// Argmax decoding (ties to the lowest index); log-probs at temperature 1.
TokenSequence greedy_sequence(const PolicyModel& policy, std::span<const double> cond,
                              int max_len = kDefaultMaxLen, Stage stage = Stage::kPlan);

/// Teacher-forced evaluation record; holds what backward needs.
struct SequenceEval {
  std::vector<double> logprobs;
  std::vector<std::array<double, kNumEmittable>> dists;
  double temperature = 1.0;
  // tape
  std::vector<Token> tokens;
  std::vector<double> cond_raw;
  nn::MlpCache proj_cache;
  std::vector<double> cond;                  // projected, size H
  std::vector<std::vector<double>> hidden;   // h[0..n], each size H
};

SequenceEval sequence_logprobs(const PolicyModel& policy, std::span<const double> cond,
                               const std::vector<Token>& tokens, double temperature = 1.0);

/// Accumulates into `grads` the parameter gradient of sum_k <dlogits[k], z[k]>
/// where z[k] are the temperature-scaled logits of step k.
void backward_scaled_logits(const PolicyModel& policy, const SequenceEval& eval,
                            const std::vector<std::array<double, kNumEmittable>>& dlogits,
                            nn::ParamSet& grads);

/// Gradient (w.r.t. scaled logits) of the summed token log-probs.
std::vector<std::array<double, kNumEmittable>> logprob_sum_grad(const SequenceEval& eval);

/// Mean token cross-entropy against `tokens`; accumulates its gradient.
double cross_entropy_step(const PolicyModel& policy, std::span<const double> cond,
                          const std::vector<Token>& tokens, nn::ParamSet& grads, double weight);

/// 1 if the sequence matches its stage grammar, else 0.
int check_format(const TokenSequence& seq);
int check_format(const std::vector<Token>& tokens, Stage stage);
EditInstruction parse_edit(const std::vector<Token>& tokens);
inline EditInstruction parse_edit(const TokenSequence& seq) { return parse_edit(seq.tokens); }

std::vector<Token> edit_clause(const EditInstruction& e);
std::vector<Token> oracle_plan(const scenes::PromptSpec& prompt);
/// THINK_OPEN diagnosis THINK_CLOSE clause EOS, diagnosis naming the edited
/// (colour, shape) and empty for NoEdit.
std::vector<Token> reflection_tokens(const EditInstruction& e);
/// Bag-of-tokens features of a plan, used to condition generation.
std::array<double, scenes::kFeatureDim> plan_features(const std::vector<Token>& tokens);

}  // namespace r3::text
