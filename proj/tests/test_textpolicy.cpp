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

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "r3/scenes.hpp"
#include "r3/textpolicy.hpp"
#include "support.hpp"

namespace r3::text {
namespace {

using T = Token;

PolicyModel random_policy(std::uint64_t seed) {
  nn::Rng rng(seed);
  return make_policy(PolicyConfig{}, rng);
}

std::vector<double> some_cond(std::uint64_t seed) {
  nn::Rng rng(seed);
  auto p = scenes::sample_prompt(rng, scenes::Split::kAny);
  auto f = scenes::featurize(p);
  auto latent = scenes::encode_scene(scenes::oracle_scene(p));
  return condition_input(f, &latent);
}

// All weights zero except the recurrent bias and the output column of unit 0,
// so the first-step logits equal `logits` exactly.
PolicyModel hand_set(const std::array<double, kNumEmittable>& logits) {
  auto p = random_policy(1);
  for (auto& [name, t] : p.params) std::fill(t.values().begin(), t.values().end(), 0.0);
  p.params.at("b")[0] = 1.0;
  const auto H = static_cast<std::size_t>(p.config.hidden_dim);
  for (int j = 0; j < kNumEmittable; ++j) p.params.at("w_o")[j * H] = logits[j] / std::tanh(1.0);
  return p;
}

TEST(Vocab, StableIndicesAndNames) {
  EXPECT_EQ(static_cast<int>(T::kPad), 0);
  EXPECT_EQ(static_cast<int>(T::kEos), 2);
  EXPECT_EQ(static_cast<int>(T::kNoEdit), 5);
  EXPECT_EQ(static_cast<int>(T::kSmaller), kVocabSize - 1);
  EXPECT_EQ(kNumEmittable, 27);
  for (int i = 0; i < kVocabSize; ++i) {
    auto t = static_cast<Token>(i);
    EXPECT_EQ(parse_token(token_name(t)), t);
  }
  EXPECT_FALSE(parse_token("PURPLE").has_value());
}

TEST(Sampling, LowTemperatureIsGreedy) {
  auto p = random_policy(3);
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto cond = some_cond(s);
    nn::Rng rng(s);
    auto cold = sample_sequence(p, cond, 1e-6, rng);
    auto greedy = greedy_sequence(p, cond);
    EXPECT_EQ(cold.tokens, greedy.tokens);
  }
}

TEST(Sampling, Deterministic) {
  auto p = random_policy(4);
  auto cond = some_cond(9);
  nn::Rng a(5), b(5);
  auto x = sample_sequence(p, cond, 0.9, a);
  auto y = sample_sequence(p, cond, 0.9, b);
  EXPECT_EQ(x.tokens, y.tokens);
  EXPECT_EQ(x.logprobs, y.logprobs);
  EXPECT_LE(x.tokens.size(), static_cast<std::size_t>(kDefaultMaxLen));
}

TEST(Sampling, SingleStepFrequenciesMatchSoftmax) {
  std::array<double, kNumEmittable> logits{};
  for (int j = 0; j < kNumEmittable; ++j) logits[j] = 0.15 * ((j * 7) % 11) - 0.5;
  logits[3] = 2.0;
  auto p = hand_set(logits);
  const double temperature = 0.9;
  double z = 0.0;
  for (double l : logits) z += std::exp(l / temperature);

  const auto cond = some_cond(1);
  nn::Rng rng(77);
  const int N = 10000;
  std::array<int, kNumEmittable> hits{};
  for (int i = 0; i < N; ++i) {
    auto seq = sample_sequence(p, cond, temperature, rng, 1);
    ASSERT_EQ(seq.tokens.size(), 1u);
    ++hits[emit_index(seq.tokens[0])];
    EXPECT_NEAR(seq.logprobs[0], logits[emit_index(seq.tokens[0])] / temperature - std::log(z), 1e-12);
  }
  for (int j = 0; j < kNumEmittable; ++j) {
    const double pj = std::exp(logits[j] / temperature) / z;
    EXPECT_LT(std::abs(hits[j] / double(N) - pj), 3.0 * testing::binomial_se(pj, N) + 1e-12) << j;
  }
}

TEST(Sampling, NeverEmitsPadOrBos) {
  auto p = random_policy(8);
  nn::Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    auto seq = sample_sequence(p, some_cond(i), 1.5, rng);
    for (Token t : seq.tokens) {
      EXPECT_NE(t, T::kPad);
      EXPECT_NE(t, T::kBos);
    }
  }
}

TEST(SequenceLogprobs, MatchesSampling) {
  auto p = random_policy(5);
  nn::Rng rng(12);
  for (int i = 0; i < 10; ++i) {
    auto cond = some_cond(i);
    auto seq = sample_sequence(p, cond, 1.0, rng);
    auto ev = sequence_logprobs(p, cond, seq.tokens);
    ASSERT_EQ(ev.logprobs.size(), seq.logprobs.size());
    for (std::size_t k = 0; k < seq.logprobs.size(); ++k) EXPECT_NEAR(ev.logprobs[k], seq.logprobs[k], 1e-9);
    for (const auto& d : ev.dists) {
      double s = 0.0;
      for (double v : d) s += v;
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
    // stored log-probs at another temperature are reproduced at that temperature
    auto hot = sample_sequence(p, cond, 0.7, rng);
    auto ev_hot = sequence_logprobs(p, cond, hot.tokens, 0.7);
    for (std::size_t k = 0; k < hot.logprobs.size(); ++k) EXPECT_NEAR(ev_hot.logprobs[k], hot.logprobs[k], 1e-9);
  }
}

TEST(SequenceLogprobs, UniformLogits) {
  auto p = random_policy(6);
  std::fill(p.params.at("w_o").values().begin(), p.params.at("w_o").values().end(), 0.0);
  auto ev = sequence_logprobs(p, some_cond(0), {T::kThinkOpen, T::kRed, T::kEos});
  for (double lp : ev.logprobs) EXPECT_NEAR(lp, -std::log(27.0), 1e-12);
  EXPECT_NEAR(-std::log(27.0), -3.2958, 1e-4);
}

TEST(SequenceLogprobs, RejectsNonEmittable) {
  auto p = random_policy(6);
  EXPECT_THROW(sequence_logprobs(p, some_cond(0), {T::kBos}), std::invalid_argument);
  EXPECT_THROW(sequence_logprobs(p, std::vector<double>(5, 0.0), {T::kEos}), std::invalid_argument);
}

TEST(SequenceLogprobs, GradientFiniteDifferences) {
  PolicyConfig small{text::kConditionDim, 4, 6, 5};
  nn::Rng rng(2);
  auto p = make_policy(small, rng);
  const auto cond = some_cond(4);
  const std::vector<Token> toks{T::kThinkOpen, T::kTwo, T::kRed, T::kCircle, T::kThinkClose, T::kEos};
  for (double temperature : {1.0, 0.8}) {
    auto sum_lp = [&] {
      double s = 0.0;
      for (double v : sequence_logprobs(p, cond, toks, temperature).logprobs) s += v;
      return s;
    };
    auto ev = sequence_logprobs(p, cond, toks, temperature);
    auto g = logprob_sum_grad(ev);
    auto grads = p.params.zeros_like();
    backward_scaled_logits(p, ev, g, grads);
    auto rep = testing::check_gradients(p.params, grads, sum_lp);
    EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst;
  }
}

TEST(CrossEntropy, GradientFiniteDifferences) {
  PolicyConfig small{text::kConditionDim, 4, 5, 4};
  nn::Rng rng(3);
  auto p = make_policy(small, rng);
  const auto cond = some_cond(2);
  const std::vector<Token> toks{T::kThinkOpen, T::kThinkClose, T::kNoEdit, T::kEos};
  auto grads = p.params.zeros_like();
  cross_entropy_step(p, cond, toks, grads, 0.5);
  auto loss = [&] {
    auto scratch = p.params.zeros_like();
    return 0.5 * cross_entropy_step(p, cond, toks, scratch, 1.0);
  };
  auto rep = testing::check_gradients(p.params, grads, loss);
  EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst;
}

TEST(Format, PlanGrammar) {
  EXPECT_EQ(check_format({T::kThinkOpen, T::kTwo, T::kRed, T::kCircle, T::kThinkClose, T::kEos}, Stage::kPlan), 1);
  EXPECT_EQ(check_format({T::kThinkOpen, T::kTwo, T::kRed, T::kCircle, T::kEos}, Stage::kPlan), 0);
  EXPECT_EQ(check_format({T::kThinkOpen, T::kOne, T::kRed, T::kCircle, T::kSep, T::kTwo, T::kBlue, T::kSquare,
                          T::kThinkClose, T::kEos},
                         Stage::kPlan),
            1);
  EXPECT_EQ(check_format({T::kThinkOpen, T::kThinkClose, T::kEos}, Stage::kPlan), 0);
  EXPECT_EQ(check_format({T::kThinkOpen, T::kTwo, T::kRed, T::kCircle, T::kThinkClose, T::kEos, T::kEos},
                         Stage::kPlan),
            0);
}

TEST(Format, ReflectionGrammar) {
  EXPECT_EQ(check_format({T::kThinkOpen, T::kRed, T::kThinkClose, T::kNoEdit, T::kEos}, Stage::kReflection), 1);
  EXPECT_EQ(check_format({T::kThinkOpen, T::kThinkClose, T::kMove, T::kRed, T::kEos}, Stage::kReflection), 0);
  EXPECT_EQ(check_format({T::kThinkOpen, T::kLeft, T::kFour, T::kThinkClose, T::kResize, T::kBlue, T::kSquare,
                          T::kBigger, T::kEos},
                         Stage::kReflection),
            1);
}

TEST(ParseEdit, Examples) {
  EXPECT_EQ(parse_edit({T::kThinkOpen, T::kThinkClose, T::kAdd, T::kTwo, T::kRed, T::kCircle, T::kEos}),
            EditInstruction(edit::Add{2, Color::kRed, Shape::kCircle}));
  EXPECT_EQ(parse_edit({T::kThinkOpen, T::kGreen, T::kThinkClose, T::kNoEdit, T::kEos}),
            EditInstruction(edit::NoEdit{}));
  auto bad = parse_edit({T::kThinkOpen, T::kThinkClose, T::kMove, T::kRed, T::kEos});
  ASSERT_TRUE(is_invalid(bad));
  EXPECT_EQ(std::get<edit::Invalid>(bad).token_index, 4u);
  EXPECT_TRUE(is_invalid(parse_edit({T::kRed})));
  EXPECT_TRUE(is_invalid(parse_edit(std::vector<T>{})));
}

TEST(ParseEdit, ClauseRoundTrip) {
  nn::Rng rng(21);
  for (int i = 0; i < 500; ++i) {
    const EditInstruction e = scenes::random_edit(rng);
    const auto toks = reflection_tokens(e);
    EXPECT_EQ(parse_edit(toks), e) << to_string(toks);
    EXPECT_EQ(check_format(toks, Stage::kReflection), 1);
  }
  EXPECT_EQ(parse_edit(reflection_tokens(edit::NoEdit{})), EditInstruction(edit::NoEdit{}));
  EXPECT_THROW(edit_clause(edit::Invalid{3}), std::invalid_argument);
}

TEST(ParseEdit, FormatImpliesParse) {
  // Random token strings: whenever the reflection grammar accepts, the parse is a real value.
  nn::Rng rng(33);
  std::uniform_int_distribution<int> tok(kFirstEmittable, kVocabSize - 1);
  std::uniform_int_distribution<int> len(1, 10);
  int accepted = 0;
  for (int i = 0; i < 20000; ++i) {
    std::vector<Token> t{T::kThinkOpen};
    const int n = len(rng);
    for (int k = 0; k < n; ++k) t.push_back(static_cast<Token>(tok(rng)));
    if (i % 2 == 0) {
      t.push_back(T::kThinkClose);
      auto clause = edit_clause(scenes::random_edit(rng));
      t.insert(t.end(), clause.begin(), clause.end());
      t.push_back(T::kEos);
    }
    if (check_format(t, Stage::kReflection) == 1) {
      ++accepted;
      EXPECT_FALSE(is_invalid(parse_edit(t)));
    }
  }
  EXPECT_GT(accepted, 1000);
}

TEST(Condition, PaddingAndInjectivity) {
  const auto prompts = scenes::all_template_prompts();
  auto f0 = scenes::featurize(prompts[0]);
  auto raw = condition_input(f0, nullptr);
  ASSERT_EQ(raw.size(), static_cast<std::size_t>(kConditionDim));
  for (int i = scenes::kFeatureDim; i < kConditionDim; ++i) EXPECT_EQ(raw[i], 0.0);

  auto p = random_policy(10);
  std::set<std::vector<double>> seen;
  for (const auto& pr : prompts) seen.insert(encode_condition(p, scenes::featurize(pr), nullptr));
  EXPECT_EQ(seen.size(), prompts.size());
  EXPECT_EQ(encode_condition(p, f0, nullptr), encode_condition(p, f0, nullptr));
  EXPECT_EQ(encode_condition(p, f0, nullptr).size(), static_cast<std::size_t>(p.config.hidden_dim));
  EXPECT_THROW(condition_input(std::vector<double>(3, 0.0), nullptr), std::invalid_argument);
}

TEST(OraclePlan, IsWellFormed) {
  for (const auto& pr : scenes::all_template_prompts()) {
    EXPECT_EQ(check_format(oracle_plan(pr), Stage::kPlan), 1) << scenes::to_line(pr);
  }
}

}  // namespace
}  // namespace r3::text
