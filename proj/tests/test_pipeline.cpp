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

#include <sstream>

#include "r3/pipeline.hpp"

namespace r3::pipeline {
namespace {

using scenes::PromptSpec;
using scenes::SceneLatent;

// Oracle policy calls; `broken` starts every image one random breaking edit away.
class OracleAgent : public Agent {
 public:
  explicit OracleAgent(bool broken = false) : broken_(broken) {}
  std::vector<text::Token> plan(const PromptSpec& p, nn::Rng&) const override { return text::oracle_plan(p); }
  SceneLatent generate(const PromptSpec& p, const std::vector<text::Token>&, nn::Rng& rng) const override {
    scenes::DecodedScene scene{scenes::oracle_scene(p)};
    if (broken_) scene = scenes::apply_edit_oracle(scene, scenes::random_breaking_edit(rng, scene, p));
    return scenes::encode_scene(scene.objects);
  }
  std::vector<text::Token> reflect(const PromptSpec& p, const SceneLatent& l, nn::Rng&) const override {
    return text::reflection_tokens(scenes::corrective_edit(scenes::decode_scene(l), p));
  }
  SceneLatent refine(const SceneLatent& l, const EditInstruction& e, nn::Rng&) const override {
    ++refines;
    return scenes::encode_scene(scenes::apply_edit_oracle(scenes::decode_scene(l), e).objects);
  }
  mutable int refines = 0;

 private:
  bool broken_;
};

class FixedReflectionAgent : public OracleAgent {
 public:
  explicit FixedReflectionAgent(std::vector<text::Token> tokens) : OracleAgent(true), tokens_(std::move(tokens)) {}
  std::vector<text::Token> reflect(const PromptSpec&, const SceneLatent&, nn::Rng&) const override { return tokens_; }

 private:
  std::vector<text::Token> tokens_;
};

class EmptyAgent : public OracleAgent {
 public:
  SceneLatent generate(const PromptSpec&, const std::vector<text::Token>&, nn::Rng&) const override {
    return scenes::encode_scene({});
  }
};

PromptSpec prompt_of(std::uint64_t seed) {
  nn::Rng rng(seed);
  return scenes::sample_prompt(rng, scenes::Split::kAny);
}

TEST(Infer, ZeroTurns) {
  OracleAgent agent(true);
  nn::Rng rng(1);
  auto trace = infer_r3(agent, prompt_of(1), 0, rng);
  EXPECT_EQ(trace.turn_count(), 0);
  EXPECT_EQ(trace.termination, Termination::kMaxTurns);
  EXPECT_EQ(trace.final_latent(), trace.initial_latent);
  EXPECT_EQ(agent.refines, 0);
  EXPECT_THROW(infer_r3(agent, prompt_of(1), -1, rng), std::invalid_argument);
}

TEST(Infer, PerfectSceneStopsOnNoEdit) {
  OracleAgent agent;
  nn::Rng rng(2);
  auto trace = infer_r3(agent, prompt_of(2), 5, rng);
  EXPECT_EQ(trace.initial_v, 1.0);
  ASSERT_EQ(trace.turn_count(), 1);
  EXPECT_TRUE(is_no_edit(trace.turns[0].edit));
  EXPECT_EQ(trace.termination, Termination::kNoEdit);
  EXPECT_FALSE(trace.invalid_parse);
  EXPECT_EQ(agent.refines, 0);
  EXPECT_EQ(trace.final_v(), 1.0);
}

TEST(Infer, OracleRepairsBrokenScenes) {
  OracleAgent agent(true);
  int repaired = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    nn::Rng rng(s);
    auto trace = infer_r3(agent, prompt_of(s), 6, rng);
    repaired += scenes::is_perfect(trace.final_v()) ? 1 : 0;
    // every recorded score re-verifies
    EXPECT_EQ(trace.initial_v, scenes::verify(trace.initial_latent, trace.prompt));
    for (const auto& t : trace.turns) EXPECT_EQ(t.v, scenes::verify(t.latent, trace.prompt));
  }
  EXPECT_GE(repaired, 45);
}

TEST(Infer, InvalidReflectionTerminates) {
  FixedReflectionAgent agent({text::Token::kThinkOpen, text::Token::kRed});
  nn::Rng rng(3);
  auto trace = infer_r3(agent, prompt_of(3), 4, rng);
  ASSERT_EQ(trace.turn_count(), 1);
  EXPECT_TRUE(trace.invalid_parse);
  EXPECT_EQ(trace.termination, Termination::kNoEdit);
  EXPECT_EQ(trace.final_latent(), trace.initial_latent);
}

TEST(Infer, BudgetExhaustion) {
  FixedReflectionAgent agent(text::reflection_tokens(edit::Recolor{Color::kRed, Shape::kCircle, Color::kBlue}));
  nn::Rng rng(4);
  auto trace = infer_r3(agent, prompt_of(4), 3, rng);
  EXPECT_EQ(trace.turn_count(), 3);
  EXPECT_EQ(trace.termination, Termination::kMaxTurns);
  EXPECT_EQ(agent.refines, 3);
}

TEST(Trace, TextForm) {
  OracleAgent agent(true);
  nn::Rng rng(5);
  auto trace = infer_r3(agent, prompt_of(5), 2, rng);
  const auto text = format_trace(trace);
  EXPECT_EQ(text.rfind("prompt " + scenes::to_line(trace.prompt), 0), 0u);
  EXPECT_NE(text.find("plan "), std::string::npos);
  std::ostringstream os;
  write_trace(os, trace);
  EXPECT_EQ(os.str(), text);
}

TEST(Evaluate, OracleIsPerfect) {
  OracleAgent agent;
  auto prompts = held_out_prompts(40, 0);
  auto rep = evaluate_generation(agent, prompts, 0, 0);
  EXPECT_EQ(rep.overall, 1.0);
  EXPECT_EQ(rep.prompts, 40);
  int total = 0;
  for (const auto& [c, n] : rep.category_count) total += n;
  EXPECT_EQ(total, 40);
  for (const auto& [c, m] : rep.category_mean) EXPECT_EQ(m, 1.0);
}

TEST(Evaluate, EmptyScenesScoreBelowOracle) {
  EmptyAgent agent;
  auto rep = evaluate_generation(agent, held_out_prompts(40, 0), 0, 0);
  EXPECT_LT(rep.overall, 1.0);
  EXPECT_GE(rep.overall, 0.0);
}

TEST(Evaluate, DeterministicAndCurveMonotoneForOracle) {
  OracleAgent agent(true);
  auto prompts = held_out_prompts(60, 1);
  auto a = evaluate_generation(agent, prompts, 2, 9);
  auto b = evaluate_generation(agent, prompts, 2, 9);
  EXPECT_EQ(a.overall, b.overall);
  EXPECT_EQ(a.noedit_rate, b.noedit_rate);
  auto curve = scaling_curve(agent, prompts, {0, 1, 2, 4}, 9);
  ASSERT_EQ(curve.size(), 4u);
  EXPECT_LT(curve[0], 1.0);
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_GE(curve[i], curve[i - 1]);
  EXPECT_THROW(evaluate_generation(agent, {}, 1, 0), std::invalid_argument);
}

TEST(Evaluate, CsvReport) {
  OracleAgent agent;
  auto rep = evaluate_generation(agent, held_out_prompts(10, 0), 1, 0);
  std::ostringstream os;
  write_report_csv(os, rep);
  EXPECT_NE(os.str().find("overall"), std::string::npos);
}

TEST(HeldOut, FixedStream) {
  auto a = held_out_prompts(30, 4);
  EXPECT_EQ(a, held_out_prompts(30, 4));
  for (const auto& p : a) EXPECT_TRUE(scenes::is_held_out(p));
}

TEST(Probe, OracleAndConstantJudges) {
  OracleAgent oracle;
  for (ProbeMode mode : {ProbeMode::kIta, ProbeMode::kVqa}) {
    auto r = understanding_probe(oracle, 200, mode, 0);
    EXPECT_EQ(r.accuracy, 1.0);
    EXPECT_EQ(r.n, 200);
    FixedReflectionAgent yes(text::reflection_tokens(edit::NoEdit{}));
    auto y = understanding_probe(yes, 200, mode, 0);
    EXPECT_EQ(y.accuracy, 0.5);
    EXPECT_EQ(y.positive_recall, 1.0);
    EXPECT_EQ(y.negative_recall, 0.0);
  }
  EXPECT_THROW(understanding_probe(oracle, 3, ProbeMode::kIta, 0), std::invalid_argument);
  EXPECT_EQ(parse_probe_mode(name_of(ProbeMode::kVqa)), ProbeMode::kVqa);
}

}  // namespace
}  // namespace r3::pipeline
