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

#include "r3/pipeline.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "r3/flowgen.hpp"

namespace r3::pipeline {

using scenes::PromptSpec;
using scenes::SceneLatent;

ModelAgent::ModelAgent(const train::R3Models& models, InferenceConfig config)
    : models_(models), config_(std::move(config)) {
  config_.samplers.reason.validate();
  config_.samplers.edit.validate();
}

std::vector<text::Token> ModelAgent::plan(const PromptSpec& prompt, nn::Rng& rng) const {
  const auto cond = train::planner_condition(prompt);
  if (config_.greedy_text) return text::greedy_sequence(models_.planner, cond).tokens;
  return text::sample_sequence(models_.planner, cond, config_.temperature, rng).tokens;
}

SceneLatent ModelAgent::generate(const PromptSpec& prompt, const std::vector<text::Token>& plan, nn::Rng& rng) const {
  const auto path = flow::sample_path(models_.generator, train::generator_condition(prompt, plan),
                                      train::generator_null_condition(), config_.samplers.reason, rng);
  return SceneLatent{path.final_state()};
}

std::vector<text::Token> ModelAgent::reflect(const PromptSpec& prompt, const SceneLatent& latent,
                                             nn::Rng& rng) const {
  const auto cond = train::reflector_condition(prompt, latent);
  if (config_.greedy_text) {
    return text::greedy_sequence(models_.reflector, cond, text::kDefaultMaxLen, text::Stage::kReflection).tokens;
  }
  return text::sample_sequence(models_.reflector, cond, config_.temperature, rng, text::kDefaultMaxLen,
                               text::Stage::kReflection)
      .tokens;
}

SceneLatent ModelAgent::refine(const SceneLatent& latent, const EditInstruction& edit, nn::Rng& rng) const {
  const auto path = flow::sample_path(models_.editor, train::editor_condition(edit, latent),
                                      train::editor_null_condition(latent), config_.samplers.edit, rng);
  return train::apply_residual(latent, path.final_state());
}

std::string name_of(Termination t) { return t == Termination::kNoEdit ? "noedit" : "max_turns"; }

R3Trace infer_r3(const Agent& agent, const PromptSpec& prompt, int max_turns, nn::Rng& rng) {
  if (max_turns < 0) throw std::invalid_argument("max_turns must be non-negative");
  R3Trace trace;
  trace.prompt = prompt;
  trace.plan = agent.plan(prompt, rng);
  trace.initial_latent = agent.generate(prompt, trace.plan, rng);
  trace.initial_v = scenes::verify(trace.initial_latent, prompt);
  trace.termination = Termination::kMaxTurns;
  for (int turn = 0; turn < max_turns; ++turn) {
    const SceneLatent& current = trace.final_latent();
    TraceTurn t;
    t.reflection = agent.reflect(prompt, current, rng);
    t.edit = text::parse_edit(t.reflection);
    if (!is_real_edit(t.edit)) {
      trace.invalid_parse = is_invalid(t.edit);
      t.latent = current;
      t.v = scenes::verify(t.latent, prompt);
      trace.turns.push_back(std::move(t));
      trace.termination = Termination::kNoEdit;
      break;
    }
    t.latent = agent.refine(current, t.edit, rng);
    t.v = scenes::verify(t.latent, prompt);
    trace.turns.push_back(std::move(t));
  }
  return trace;
}

namespace {

void write_latent(std::ostream& os, const SceneLatent& latent) {
  for (std::size_t i = 0; i < latent.values.size(); ++i) os << (i ? " " : "") << latent.values[i];
}

}  // namespace

void write_trace(std::ostream& os, const R3Trace& trace) {
  const auto old_precision = os.precision(17);
  os << "prompt " << scenes::to_line(trace.prompt) << '\n';
  os << "plan " << text::to_string(trace.plan) << '\n';
  os << "turn 0 v " << trace.initial_v << '\n';
  os << "latent ";
  write_latent(os, trace.initial_latent);
  os << '\n';
  for (std::size_t i = 0; i < trace.turns.size(); ++i) {
    const auto& t = trace.turns[i];
    os << "turn " << i + 1 << " v " << t.v << '\n';
    os << "reflection " << text::to_string(t.reflection) << '\n';
    os << "edit " << to_string(t.edit) << '\n';
    os << "latent ";
    write_latent(os, t.latent);
    os << '\n';
  }
  os << "termination " << name_of(trace.termination) << (trace.invalid_parse ? " invalid_parse" : "") << '\n';
  os << "turns " << trace.turn_count() << '\n';
  os.precision(old_precision);
}

std::string format_trace(const R3Trace& trace) {
  std::ostringstream os;
  write_trace(os, trace);
  return os.str();
}

EvalReport evaluate_generation(const Agent& agent, const std::vector<PromptSpec>& eval_set, int max_turns,
                               std::uint64_t seed) {
  if (eval_set.empty()) throw std::invalid_argument("eval set is empty");
  EvalReport report;
  for (auto c : scenes::kAllCategories) {
    report.category_mean[c] = 0.0;
    report.category_count[c] = 0;
  }
  int noedit = 0, invalid = 0, turns = 0;
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    nn::Rng rng(train::derive_seed(seed, 0xe7a1, i));
    const auto trace = infer_r3(agent, eval_set[i], max_turns, rng);
    const double v = trace.final_v();
    report.category_mean[eval_set[i].category] += v;
    report.category_count[eval_set[i].category] += 1;
    report.overall += v;
    noedit += trace.termination == Termination::kNoEdit ? 1 : 0;
    invalid += trace.invalid_parse ? 1 : 0;
    turns += trace.turn_count();
  }
  for (auto& [c, sum] : report.category_mean) {
    const int n = report.category_count[c];
    if (n > 0) sum /= n;
  }
  const double n = static_cast<double>(eval_set.size());
  report.overall /= n;
  report.noedit_rate = noedit / n;
  report.invalid_rate = invalid / n;
  report.mean_turns = turns / n;
  report.prompts = static_cast<int>(eval_set.size());
  report.budgets = {max_turns};
  report.budget_scores = {report.overall};
  return report;
}

std::vector<double> scaling_curve(const Agent& agent, const std::vector<PromptSpec>& eval_set,
                                  const std::vector<int>& budgets, std::uint64_t seed) {
  if (!std::is_sorted(budgets.begin(), budgets.end())) throw std::invalid_argument("budgets must be sorted ascending");
  std::vector<double> out;
  for (int b : budgets) out.push_back(evaluate_generation(agent, eval_set, b, seed).overall);
  return out;
}

std::vector<PromptSpec> held_out_prompts(int n, std::uint64_t seed) {
  nn::Rng rng(train::derive_seed(seed, 0x5eed));
  std::vector<PromptSpec> out;
  for (int i = 0; i < n; ++i) out.push_back(scenes::sample_prompt(rng, scenes::Split::kHeldOut));
  return out;
}

void write_report_csv(std::ostream& os, const EvalReport& report) {
  const auto old_precision = os.precision(9);
  os << "metric,value\n";
  for (const auto& [c, v] : report.category_mean) os << "category_" << scenes::name_of(c) << ',' << v << '\n';
  os << "overall," << report.overall << '\n';
  for (std::size_t i = 0; i < report.budgets.size(); ++i) {
    os << "budget_" << report.budgets[i] << ',' << report.budget_scores[i] << '\n';
  }
  os << "noedit_rate," << report.noedit_rate << '\n';
  os << "invalid_rate," << report.invalid_rate << '\n';
  os << "mean_turns," << report.mean_turns << '\n';
  os << "prompts," << report.prompts << '\n';
  os.precision(old_precision);
}

std::string name_of(ProbeMode m) { return m == ProbeMode::kIta ? "ita" : "vqa"; }

ProbeMode parse_probe_mode(const std::string& s) {
  if (s == "ita" || s == "ITA") return ProbeMode::kIta;
  if (s == "vqa" || s == "VQA") return ProbeMode::kVqa;
  throw std::invalid_argument("unknown probe mode '" + s + "' (expected ita or vqa)");
}

namespace {

struct ProbeItem {
  PromptSpec prompt;
  SceneLatent latent;
};

ProbeItem ita_item(bool aligned, nn::Rng& rng) {
  while (true) {
    const auto prompt = scenes::sample_prompt(rng, scenes::Split::kAny);
    scenes::DecodedScene scene{scenes::oracle_scene(prompt, rng)};
    if (!aligned) {
      const auto e = scenes::random_breaking_edit(rng, scene, prompt);
      if (!is_real_edit(e)) continue;
      scene = scenes::apply_edit_oracle(scene, e);
    }
    return {prompt, scenes::encode_scene(scene.objects)};
  }
}

ProbeItem vqa_item(bool yes, nn::Rng& rng) {
  std::uniform_int_distribution<int> pick_color(0, kNumColors - 1), pick_shape(0, kNumShapes - 1);
  std::uniform_int_distribution<int> pick_count(1, 3);
  while (true) {
    const auto context = scenes::sample_prompt(rng, scenes::Split::kAny);
    const auto objects = scenes::oracle_scene(context, rng);
    scenes::ObjectGroup g;
    if (yes) {
      std::uniform_int_distribution<std::size_t> pick(0, objects.size() - 1);
      const auto& o = objects[pick(rng)];
      g.color = o.color;
      g.shape = o.shape;
      g.count = static_cast<int>(std::count_if(objects.begin(), objects.end(), [&](const scenes::SceneObject& x) {
        return x.color == o.color && x.shape == o.shape;
      }));
      if (g.count > kMaxCount) continue;
    } else {
      g.color = static_cast<Color>(pick_color(rng));
      g.shape = static_cast<Shape>(pick_shape(rng));
      g.count = pick_count(rng);
    }
    PromptSpec q;
    q.groups = {g};
    q.category = scenes::infer_category(q);
    const auto latent = scenes::encode_scene(objects);
    if (!yes && scenes::is_perfect(scenes::verify(latent, q))) continue;
    return {q, latent};
  }
}

}  // namespace

ProbeResult understanding_probe(const Agent& agent, int n_pairs, ProbeMode mode, std::uint64_t seed) {
  if (n_pairs < 2 || n_pairs % 2 != 0) throw std::invalid_argument("n_pairs must be even and at least 2");
  nn::Rng rng(train::derive_seed(seed, mode == ProbeMode::kIta ? 0x17a : 0x7a9));
  ProbeResult out;
  out.n = n_pairs;
  int correct = 0, pos = 0, pos_hit = 0, neg = 0, neg_hit = 0;
  for (int i = 0; i < n_pairs; ++i) {
    const bool positive = i % 2 == 0;
    const auto item = mode == ProbeMode::kIta ? ita_item(positive, rng) : vqa_item(positive, rng);
    const bool truth = scenes::is_perfect(scenes::verify(item.latent, item.prompt));
    const bool judged = is_no_edit(text::parse_edit(agent.reflect(item.prompt, item.latent, rng)));
    correct += judged == truth ? 1 : 0;
    if (truth) {
      ++pos;
      pos_hit += judged ? 1 : 0;
    } else {
      ++neg;
      neg_hit += judged ? 0 : 1;
    }
  }
  out.accuracy = static_cast<double>(correct) / n_pairs;
  out.positive_recall = pos ? static_cast<double>(pos_hit) / pos : 0.0;
  out.negative_recall = neg ? static_cast<double>(neg_hit) / neg : 0.0;
  return out;
}

}  // namespace r3::pipeline
