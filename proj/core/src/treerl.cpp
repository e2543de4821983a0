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

#include "r3/treerl.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace r3::train {
namespace {

using scenes::PromptSpec;
using scenes::SceneLatent;

std::vector<double> to_vector(const std::array<double, scenes::kFeatureDim>& a) {
  return {a.begin(), a.end()};
}

void check_same_layout(const nn::ParamSet& have, const nn::ParamSet& want, const std::string& head) {
  for (const auto& [name, t] : want) {
    if (!have.contains(name)) throw std::invalid_argument("missing tensor " + head + "." + name);
    if (!have.at(name).same_shape(t)) {
      throw std::invalid_argument("shape mismatch for " + head + "." + name + ": " +
                                  nn::shape_string(have.at(name).shape()) + " vs " + nn::shape_string(t.shape()));
    }
  }
}

}  // namespace

nn::ParamSet R3Models::flatten() const {
  nn::ParamSet all;
  all.merge(planner.params, "planner.");
  all.merge(reflector.params, "reflector.");
  all.merge(generator.params, "generator.");
  all.merge(editor.params, "editor.");
  return all;
}

void R3Models::assign(const nn::ParamSet& all) {
  auto p = all.extract("planner.");
  auto r = all.extract("reflector.");
  auto g = all.extract("generator.");
  auto e = all.extract("editor.");
  check_same_layout(p, planner.params, "planner");
  check_same_layout(r, reflector.params, "reflector");
  check_same_layout(g, generator.params, "generator");
  check_same_layout(e, editor.params, "editor");
  auto copy_into = [](nn::ParamSet& dst, const nn::ParamSet& src) {
    for (auto& [name, t] : dst) t = src.at(name);
  };
  copy_into(planner.params, p);
  copy_into(reflector.params, r);
  copy_into(generator.params, g);
  copy_into(editor.params, e);
}

R3Models make_models(const ModelConfig& config, std::uint64_t seed) {
  nn::Rng rng(seed);
  R3Models m;
  m.planner = text::make_policy(config.planner, rng);
  m.reflector = text::make_policy(config.reflector, rng);
  m.generator = flow::make_flow_model(scenes::kLatentDim, kGeneratorCondDim, config.generator_hidden, rng);
  m.editor = flow::make_flow_model(scenes::kLatentDim, kEditorCondDim, config.editor_hidden, rng);
  return m;
}

std::vector<double> generator_condition(const PromptSpec& prompt, const std::vector<text::Token>& plan) {
  auto out = to_vector(scenes::featurize(prompt));
  const auto pf = text::plan_features(plan);
  out.insert(out.end(), pf.begin(), pf.end());
  return out;
}

std::vector<double> generator_null_condition() { return std::vector<double>(kGeneratorCondDim, 0.0); }

std::vector<double> editor_condition(const EditInstruction& edit, const SceneLatent& source) {
  auto out = to_vector(scenes::featurize(edit));
  out.insert(out.end(), source.values.begin(), source.values.end());
  return out;
}

std::vector<double> editor_null_condition(const SceneLatent& source) {
  std::vector<double> out(scenes::kFeatureDim, 0.0);
  out.insert(out.end(), source.values.begin(), source.values.end());
  return out;
}

std::vector<double> editor_residual(const SceneLatent& target, const SceneLatent& source) {
  std::vector<double> out(target.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = target.values[i] - source.values[i];
  return out;
}

SceneLatent apply_residual(const SceneLatent& source, const std::vector<double>& residual) {
  if (residual.size() != source.values.size()) throw std::invalid_argument("residual size mismatch");
  SceneLatent out = source;
  for (std::size_t i = 0; i < residual.size(); ++i) out.values[i] += residual[i];
  return out;
}

std::vector<double> planner_condition(const PromptSpec& prompt) {
  const auto f = scenes::featurize(prompt);
  return text::condition_input(f, nullptr);
}

std::vector<double> reflector_condition(const PromptSpec& prompt, const SceneLatent& latent) {
  const auto f = scenes::featurize(prompt);
  return text::condition_input(f, &latent);
}

std::uint64_t derive_seed(std::uint64_t run_seed, std::uint64_t a, std::uint64_t b, std::uint64_t c,
                          std::uint64_t d) {
  // splitmix64 finaliser folded over the components
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(run_seed);
  for (std::uint64_t v : {a, b, c, d}) h = mix(h ^ mix(v));
  return h;
}

// ---------------------------------------------------------------------------

SceneLatent synthetic_source(const PromptSpec& prompt, double perfect_frac, double noise, nn::Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  scenes::DecodedScene scene{scenes::oracle_scene(prompt, rng)};
  if (u(rng) >= perfect_frac) {
    scene = scenes::apply_edit_oracle(scene, scenes::random_breaking_edit(rng, scene, prompt));
    if (u(rng) < 0.3) scene = scenes::apply_edit_oracle(scene, scenes::random_edit(rng));
  }
  SceneLatent latent = scenes::encode_scene(scene.objects);
  if (u(rng) < 0.5) {
    std::array<int, scenes::kSlots> perm;
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    SceneLatent shuffled;
    for (int s = 0; s < scenes::kSlots; ++s) {
      std::copy_n(latent.values.begin() + perm[static_cast<std::size_t>(s)] * scenes::kSlotWidth, scenes::kSlotWidth,
                  shuffled.values.begin() + s * scenes::kSlotWidth);
    }
    latent = shuffled;
  }
  if (noise > 0.0) {
    std::normal_distribution<double> n(0.0, noise);
    for (double& v : latent.values) v += n(rng);
  }
  return latent;
}

namespace {

flow::FmBatch make_fm_batch(std::vector<std::vector<double>> x0, std::vector<std::vector<double>> cond,
                            nn::Rng& rng) {
  const std::size_t B = x0.size();
  const std::size_t D = x0.front().size();
  const std::size_t C = cond.front().size();
  flow::FmBatch batch{nn::Tensor({B, D}), nn::Tensor({B, D}), std::vector<double>(B), nn::Tensor({B, C})};
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t b = 0; b < B; ++b) {
    std::copy(x0[b].begin(), x0[b].end(), batch.x0.row(b).begin());
    std::copy(cond[b].begin(), cond[b].end(), batch.cond.row(b).begin());
    for (double& v : batch.x1.row(b)) v = n(rng);
    batch.t[b] = u(rng);
  }
  return batch;
}

double fm_train_step(flow::FlowModel& model, nn::AdamState& adam, std::vector<std::vector<double>> x0,
                     std::vector<std::vector<double>> cond, nn::Rng& rng) {
  auto batch = make_fm_batch(std::move(x0), std::move(cond), rng);
  auto res = flow::fm_loss(model, batch);
  nn::adam_step(model.params, res.grads, adam);
  return res.loss;
}

double cosine_lr(double base, int step, int steps, bool enabled) {
  if (!enabled || steps <= 1) return base;
  return 0.5 * base * (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(steps)));
}

}  // namespace

PretrainCurves pretrain(R3Models& models, const PretrainConfig& config, nn::Rng& rng) {
  PretrainCurves curves;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // Each head draws from its own stream so budgets can change independently.
  nn::Rng gen_rng(rng()), edit_rng(rng()), plan_rng(rng()), refl_rng(rng());

  auto gen_adam = nn::make_adam(models.generator.params, config.flow_lr);
  for (int step = 0; step < config.generator_steps; ++step) {
    gen_adam.lr = cosine_lr(config.flow_lr, step, config.generator_steps, config.cosine_decay);
    std::vector<std::vector<double>> x0, cond;
    for (int b = 0; b < config.flow_batch; ++b) {
      const auto prompt = scenes::sample_prompt(gen_rng, scenes::Split::kTrain);
      x0.push_back(scenes::encode_scene(scenes::oracle_scene(prompt, gen_rng)).values);
      cond.push_back(u(gen_rng) < config.cond_dropout ? generator_null_condition()
                                                      : generator_condition(prompt, text::oracle_plan(prompt)));
    }
    curves.generator.push_back(fm_train_step(models.generator, gen_adam, std::move(x0), std::move(cond), gen_rng));
  }

  // Sources for the reflect-refine heads: synthetic scenes mixed with a pool
  // of samples from the generator just trained, so both heads see its
  // artefacts. The pool oversamples candidates and admits perfect ones only
  // with probability generated_perfect_keep; rejects backfill a short pool.
  std::vector<std::pair<PromptSpec, SceneLatent>> pool;
  const bool use_pool = config.generated_source_frac > 0.0 && (config.editor_steps > 0 || config.reflector_steps > 0);
  if (use_pool) {
    nn::Rng pool_rng(rng());
    const auto want = static_cast<std::size_t>(config.source_pool);
    const std::size_t cap = want * static_cast<std::size_t>(config.generated_oversample);
    std::vector<std::pair<PromptSpec, SceneLatent>> rejected;
    for (std::size_t seen = 0; seen < cap && pool.size() < want;) {
      const std::size_t chunk = std::min<std::size_t>(256, cap - seen);
      std::vector<PromptSpec> cand(chunk);
      std::vector<std::vector<double>> conds, unconds;
      std::vector<nn::Rng> rngs;
      for (auto& p : cand) {
        p = scenes::sample_prompt(pool_rng, scenes::Split::kTrain);
        conds.push_back(generator_condition(p, text::oracle_plan(p)));
        unconds.push_back(generator_null_condition());
        rngs.emplace_back(pool_rng());
      }
      auto paths = flow::sample_paths(models.generator, conds, unconds, config.source_sampler, rngs);
      for (std::size_t k = 0; k < chunk && pool.size() < want; ++k) {
        SceneLatent l;
        l.values = paths[k].final_state();
        const bool keep =
            !scenes::is_perfect(scenes::verify(l, cand[k])) || u(pool_rng) < config.generated_perfect_keep;
        (keep ? pool : rejected).emplace_back(cand[k], std::move(l));
      }
      seen += chunk;
    }
    for (std::size_t j = 0; pool.size() < want && j < rejected.size(); ++j) pool.push_back(rejected[j]);
  }

  auto draw_sources = [&](int n, nn::Rng& r) {
    std::vector<PromptSpec> prompts(static_cast<std::size_t>(n));
    std::vector<SceneLatent> sources(static_cast<std::size_t>(n));
    std::uniform_int_distribution<std::size_t> pick(0, pool.empty() ? 0 : pool.size() - 1);
    for (std::size_t b = 0; b < prompts.size(); ++b) {
      if (!pool.empty() && u(r) < config.generated_source_frac) {
        std::tie(prompts[b], sources[b]) = pool[pick(r)];
      } else {
        prompts[b] = scenes::sample_prompt(r, scenes::Split::kTrain);
        sources[b] = synthetic_source(prompts[b], config.perfect_source_frac, config.source_noise, r);
      }
    }
    return std::make_pair(std::move(prompts), std::move(sources));
  };

  auto edit_adam = nn::make_adam(models.editor.params, config.flow_lr);
  for (int step = 0; step < config.editor_steps; ++step) {
    edit_adam.lr = cosine_lr(config.flow_lr, step, config.editor_steps, config.cosine_decay);
    const auto [prompts, sources] = draw_sources(config.flow_batch, edit_rng);
    std::vector<std::vector<double>> x0, cond;
    for (std::size_t b = 0; b < prompts.size(); ++b) {
      const auto& source = sources[b];
      EditInstruction e = edit::NoEdit{};
      if (u(edit_rng) < 0.6) e = scenes::corrective_edit(scenes::decode_scene(source), prompts[b]);
      if (!is_real_edit(e)) e = scenes::random_edit(edit_rng);
      x0.push_back(editor_residual(scenes::edit_latent_target(source, e), source));
      cond.push_back(u(edit_rng) < config.cond_dropout ? editor_null_condition(source) : editor_condition(e, source));
    }
    curves.editor.push_back(fm_train_step(models.editor, edit_adam, std::move(x0), std::move(cond), edit_rng));
  }

  auto text_loop = [&](text::PolicyModel& policy, int steps, nn::Rng& r, bool reflection,
                       std::vector<double>& curve) {
    auto adam = nn::make_adam(policy.params, config.text_lr);
    const double w = 1.0 / static_cast<double>(config.text_batch);
    for (int step = 0; step < steps; ++step) {
      adam.lr = cosine_lr(config.text_lr, step, steps, config.cosine_decay);
      auto grads = policy.params.zeros_like();
      double loss = 0.0;
      if (reflection) {
        const auto [prompts, sources] = draw_sources(config.text_batch, r);
        for (std::size_t b = 0; b < prompts.size(); ++b) {
          const auto target = text::reflection_tokens(scenes::corrective_edit(scenes::decode_scene(sources[b]), prompts[b]));
          loss += w * text::cross_entropy_step(policy, reflector_condition(prompts[b], sources[b]), target, grads, w);
        }
      } else {
        for (int b = 0; b < config.text_batch; ++b) {
          const auto prompt = scenes::sample_prompt(r, scenes::Split::kTrain);
          loss += w * text::cross_entropy_step(policy, planner_condition(prompt), text::oracle_plan(prompt), grads, w);
        }
      }
      nn::adam_step(policy.params, grads, adam);
      curve.push_back(loss);
    }
  };
  text_loop(models.planner, config.planner_steps, plan_rng, false, curves.planner);
  text_loop(models.reflector, config.reflector_steps, refl_rng, true, curves.reflector);
  return curves;
}

// ---------------------------------------------------------------------------

std::string name_of(Mode m) { return m == Mode::kTree ? "tree" : "full"; }

Mode parse_mode(const std::string& s) {
  if (s == "tree") return Mode::kTree;
  if (s == "full" || s == "full_trajectory") return Mode::kFullTrajectory;
  throw std::invalid_argument("unknown mode '" + s + "' (expected tree or full)");
}

void TrainConfig::validate() const {
  if (prompt_batch < 1) throw std::invalid_argument("prompt_batch must be positive");
  if (group_size < 2) throw std::invalid_argument("group_size must be at least 2");
  if (select_count < 1) throw std::invalid_argument("select_count must be positive");
  if (select_count > prompt_batch * group_size) {
    throw std::invalid_argument("select_count must not exceed prompt_batch * group_size");
  }
  if (!(perfect_frac >= 0.0 && perfect_frac <= 1.0)) throw std::invalid_argument("perfect_frac must be in [0, 1]");
  if (steps < 0) throw std::invalid_argument("steps must be non-negative");
  if (trajectory_length < 1) throw std::invalid_argument("trajectory_length must be at least 1");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (buffer_cap < static_cast<std::size_t>(select_count)) throw std::invalid_argument("buffer_cap below select_count");
  if (!(text_lr > 0.0) || !(flow_lr > 0.0)) throw std::invalid_argument("learning rates must be positive");
  samplers.reason.validate();
  samplers.edit.validate();
  rl.validate();
  if (rl.group_size != group_size) throw std::invalid_argument("rl.group_size must equal group_size");
}

ReasonRollout rollout_reason(const R3Models& models, const std::vector<PromptSpec>& prompts, const TrainConfig& cfg,
                             int iteration) {
  const int G = cfg.group_size;
  ReasonRollout out;
  std::vector<nn::Rng> rngs;
  std::vector<std::vector<double>> conds, unconds;
  out.groups.resize(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto pcond = planner_condition(prompts[i]);
    for (int j = 0; j < G; ++j) {
      nn::Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(iteration), 0, i, static_cast<std::uint64_t>(j)));
      StageRecord rec;
      rec.stage = rewards::StageKind::kReason;
      rec.prompt = prompts[i];
      rec.text_cond = pcond;
      rec.tokens = text::sample_sequence(models.planner, pcond, cfg.temperature, rng, text::kDefaultMaxLen,
                                         text::Stage::kPlan);
      conds.push_back(generator_condition(prompts[i], rec.tokens.tokens));
      unconds.push_back(generator_null_condition());
      rngs.push_back(std::move(rng));
      out.groups[i].records.push_back(std::move(rec));
    }
  }
  auto paths = flow::sample_paths(models.generator, conds, unconds, cfg.samplers.reason, rngs);
  std::size_t k = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    auto& group = out.groups[i];
    group.batch.condition_id = scenes::to_line(prompts[i]);
    for (int j = 0; j < G; ++j, ++k) {
      auto& rec = group.records[static_cast<std::size_t>(j)];
      rec.result.values = paths[k].final_state();
      const double v = scenes::verify(rec.result, rec.prompt);
      rec.rewards = rewards::reason_breakdown(v, text::check_format(rec.tokens));
      rec.path = std::move(paths[k]);
      rl::GroupMember m;
      m.text_cond = rec.text_cond;
      m.text = rec.tokens;
      m.text_reward = *rec.rewards.r_text;
      m.path = rec.path;
      m.flow_reward = *rec.rewards.r_diffusion;
      group.batch.members.push_back(std::move(m));
      out.entries.push_back(BufferEntry{rec.prompt, rec.result, v, iteration, j});
    }
  }
  return out;
}

std::vector<BufferEntry> select_from_buffer(std::deque<BufferEntry>& buffer, const TrainConfig& cfg, nn::Rng& rng) {
  const auto n = static_cast<std::size_t>(cfg.select_count);
  std::vector<std::size_t> perfect;
  std::array<std::vector<std::size_t>, 4> bins;
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const double v = buffer[i].v_hat;
    if (scenes::is_perfect(v)) {
      perfect.push_back(i);
    } else {
      bins[static_cast<std::size_t>(std::clamp(static_cast<int>(v * 4.0), 0, 3))].push_back(i);
    }
  }
  auto take_random = [&rng](std::vector<std::size_t>& pool) {
    std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
    const std::size_t k = d(rng);
    const std::size_t idx = pool[k];
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
    return idx;
  };
  std::vector<std::size_t> chosen;
  const auto quota = static_cast<std::size_t>(std::lround(cfg.perfect_frac * static_cast<double>(n)));
  while (chosen.size() < std::min(quota, n) && !perfect.empty()) chosen.push_back(take_random(perfect));
  for (std::size_t b = 0; chosen.size() < n;) {
    bool any = false;
    for (std::size_t tries = 0; tries < bins.size() && chosen.size() < n; ++tries, b = (b + 1) % bins.size()) {
      if (bins[b].empty()) continue;
      chosen.push_back(take_random(bins[b]));
      any = true;
    }
    if (!any) break;
  }
  // Imperfect entries exhausted: top up with perfect ones.
  while (chosen.size() < n && !perfect.empty()) chosen.push_back(take_random(perfect));

  std::vector<BufferEntry> out;
  out.reserve(chosen.size());
  for (std::size_t idx : chosen) out.push_back(buffer[idx]);
  std::sort(chosen.begin(), chosen.end());
  for (auto it = chosen.rbegin(); it != chosen.rend(); ++it) buffer.erase(buffer.begin() + static_cast<std::ptrdiff_t>(*it));
  return out;
}

std::vector<StageGroup> rollout_reflect_refine(const R3Models& models, const std::vector<BufferEntry>& entries,
                                               const TrainConfig& cfg, int iteration) {
  const int G = cfg.group_size;
  std::vector<StageGroup> groups(entries.size());
  std::vector<nn::Rng> rngs;
  std::vector<std::vector<double>> conds, unconds;
  std::vector<std::pair<std::size_t, std::size_t>> owners;
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const auto& entry = entries[e];
    const auto rcond = reflector_condition(entry.prompt, entry.latent);
    for (int j = 0; j < G; ++j) {
      nn::Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(iteration), 1, e, static_cast<std::uint64_t>(j)));
      StageRecord rec;
      rec.stage = rewards::StageKind::kReflectRefine;
      rec.prompt = entry.prompt;
      rec.text_cond = rcond;
      rec.source = entry.latent;
      rec.result = entry.latent;
      rec.tokens = text::sample_sequence(models.reflector, rcond, cfg.temperature, rng, text::kDefaultMaxLen,
                                         text::Stage::kReflection);
      rec.edit = text::parse_edit(rec.tokens);
      if (is_real_edit(rec.edit)) {
        conds.push_back(editor_condition(rec.edit, entry.latent));
        unconds.push_back(editor_null_condition(entry.latent));
        rngs.push_back(std::move(rng));
        owners.emplace_back(e, static_cast<std::size_t>(j));
      }
      groups[e].records.push_back(std::move(rec));
    }
  }
  if (!conds.empty()) {
    auto paths = flow::sample_paths(models.editor, conds, unconds, cfg.samplers.edit, rngs);
    for (std::size_t k = 0; k < paths.size(); ++k) {
      auto& rec = groups[owners[k].first].records[owners[k].second];
      rec.result = apply_residual(*rec.source, paths[k].final_state());
      rec.path = std::move(paths[k]);
    }
  }
  for (std::size_t e = 0; e < entries.size(); ++e) {
    auto& group = groups[e];
    group.batch.condition_id = scenes::to_line(entries[e].prompt);
    for (auto& rec : group.records) {
      std::optional<double> v_new;
      if (rec.path) v_new = scenes::verify(rec.result, rec.prompt);
      rec.rewards = rewards::reflect_refine_breakdown(entries[e].v_hat, v_new, rec.edit, text::check_format(rec.tokens));
      rl::GroupMember m;
      m.text_cond = rec.text_cond;
      m.text = rec.tokens;
      m.text_reward = *rec.rewards.r_reflection;
      if (rec.path) {
        m.path = rec.path;
        m.flow_reward = *rec.rewards.r_refinement;
      }
      group.batch.members.push_back(std::move(m));
    }
  }
  return groups;
}

// ---------------------------------------------------------------------------

TrainState make_train_state(const R3Models& warm_start, const TrainConfig& cfg) {
  TrainState s{warm_start, warm_start, {}, {}, {}, {}, {}, 0};
  s.planner_adam = nn::make_adam(s.models.planner.params, cfg.text_lr);
  s.reflector_adam = nn::make_adam(s.models.reflector.params, cfg.text_lr);
  s.generator_adam = nn::make_adam(s.models.generator.params, cfg.flow_lr);
  s.editor_adam = nn::make_adam(s.models.editor.params, cfg.flow_lr);
  return s;
}

namespace {

std::vector<PromptSpec> iteration_prompts(const TrainConfig& cfg, int iteration) {
  nn::Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(iteration), 7));
  std::vector<PromptSpec> prompts;
  for (int i = 0; i < cfg.prompt_batch; ++i) {
    std::optional<scenes::Category> cat;
    if (!cfg.category_mix.empty()) {
      std::uniform_int_distribution<std::size_t> d(0, cfg.category_mix.size() - 1);
      cat = cfg.category_mix[d(rng)];
    }
    prompts.push_back(scenes::sample_prompt(rng, scenes::Split::kTrain, cat));
  }
  return prompts;
}

rl::PolicyHeads reason_heads(TrainState& s, const TrainConfig& cfg) {
  rl::PolicyHeads h;
  h.text = &s.models.planner;
  h.text_ref = &s.reference.planner;
  h.text_adam = &s.planner_adam;
  h.flow = &s.models.generator;
  h.flow_ref = &s.reference.generator;
  h.flow_adam = &s.generator_adam;
  h.flow_sampler = cfg.samplers.reason;
  return h;
}

rl::PolicyHeads reflect_heads(TrainState& s, const TrainConfig& cfg) {
  rl::PolicyHeads h;
  h.text = &s.models.reflector;
  h.text_ref = &s.reference.reflector;
  h.text_adam = &s.reflector_adam;
  h.flow = &s.models.editor;
  h.flow_ref = &s.reference.editor;
  h.flow_adam = &s.editor_adam;
  h.flow_sampler = cfg.samplers.edit;
  return h;
}

struct StatAccumulator {
  double clip = 0.0, kl_text = 0.0, kl_flow = 0.0;
  int n = 0;
  void add(const rl::UpdateStats& s) {
    clip += s.clip_fraction;
    kl_text += s.kl_text;
    kl_flow += s.kl_flow;
    ++n;
  }
  void fill(MetricsRow& row) const {
    if (n == 0) return;
    row.clip_frac = clip / n;
    row.kl_text = kl_text / n;
    row.kl_flow = kl_flow / n;
  }
};

void push_entries(TrainState& s, const std::vector<BufferEntry>& entries, std::size_t cap) {
  for (const auto& e : entries) s.buffer.push_back(e);
  while (s.buffer.size() > cap) s.buffer.pop_front();
}

std::vector<MetricsRow> tree_iteration(TrainState& s, const TrainConfig& cfg) {
  const int it = s.iteration;
  std::vector<MetricsRow> rows;

  auto reason = rollout_reason(s.models, iteration_prompts(cfg, it), cfg, it);
  {
    auto heads = reason_heads(s, cfg);
    StatAccumulator acc;
    MetricsRow row{it, "reason"};
    int n = 0, perfect = 0;
    for (const auto& g : reason.groups) {
      acc.add(rl::policy_update(g.batch, heads, cfg.rl));
      for (const auto& r : g.records) {
        row.mean_reward += *r.rewards.r_text;
        row.mean_v += r.rewards.v;
        perfect += scenes::is_perfect(r.rewards.v) ? 1 : 0;
        ++n;
      }
    }
    push_entries(s, reason.entries, cfg.buffer_cap);
    acc.fill(row);
    row.mean_reward /= n;
    row.mean_v /= n;
    row.perfect_frac = static_cast<double>(perfect) / n;
    row.buffer_size = s.buffer.size();
    rows.push_back(row);
  }

  for (int turn = 1; turn < cfg.trajectory_length; ++turn) {
    nn::Rng sel_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(it), 8, static_cast<std::uint64_t>(turn)));
    const auto selected = select_from_buffer(s.buffer, cfg, sel_rng);
    if (selected.empty()) break;
    auto groups = rollout_reflect_refine(s.models, selected, cfg, it * 64 + turn);
    auto heads = reflect_heads(s, cfg);
    StatAccumulator acc;
    MetricsRow row{it, "reflect"};
    int n = 0;
    std::vector<BufferEntry> refined;
    for (const auto& g : groups) {
      acc.add(rl::policy_update(g.batch, heads, cfg.rl));
      for (std::size_t j = 0; j < g.records.size(); ++j) {
        const auto& r = g.records[j];
        row.mean_reward += *r.rewards.r_reflection;
        row.mean_v += r.rewards.v;
        ++n;
        if (r.path) refined.push_back(BufferEntry{r.prompt, r.result, r.rewards.v, it, static_cast<int>(j)});
      }
    }
    int perfect = 0;
    for (const auto& e : selected) perfect += scenes::is_perfect(e.v_hat) ? 1 : 0;
    // Deeper chains: refined scenes become starting points for the next turn.
    if (turn + 1 < cfg.trajectory_length) push_entries(s, refined, cfg.buffer_cap);
    acc.fill(row);
    row.mean_reward /= n;
    row.mean_v /= n;
    row.perfect_frac = static_cast<double>(perfect) / static_cast<double>(selected.size());
    row.buffer_size = s.buffer.size();
    rows.push_back(row);
  }
  return rows;
}

std::vector<MetricsRow> full_iteration(TrainState& s, const TrainConfig& cfg) {
  const int it = s.iteration;
  const int G = cfg.group_size;
  const auto prompts = iteration_prompts(cfg, it);
  auto reason = rollout_reason(s.models, prompts, cfg, it);
  const std::size_t P = prompts.size();

  // Chain state per (prompt, member).
  std::vector<std::vector<SceneLatent>> current(P);
  std::vector<std::vector<bool>> active(P);
  for (std::size_t i = 0; i < P; ++i) {
    for (const auto& r : reason.groups[i].records) {
      current[i].push_back(r.result);
      active[i].push_back(true);
    }
  }

  // Each turn: one group batch per prompt, members without a sample that turn
  // contribute nothing to that head.
  std::vector<std::vector<rl::GroupBatch>> turn_batches;
  for (int turn = 1; turn < cfg.trajectory_length; ++turn) {
    std::vector<rl::GroupBatch> batches(P);
    std::vector<nn::Rng> rngs;
    std::vector<std::vector<double>> conds, unconds;
    std::vector<std::pair<std::size_t, std::size_t>> owners;
    for (std::size_t i = 0; i < P; ++i) {
      batches[i].condition_id = scenes::to_line(prompts[i]);
      batches[i].members.resize(static_cast<std::size_t>(G));
      for (int j = 0; j < G; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        if (!active[i][ju]) continue;
        nn::Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(it * 64 + turn), 1, i, ju));
        auto& m = batches[i].members[ju];
        m.text_cond = reflector_condition(prompts[i], current[i][ju]);
        m.text = text::sample_sequence(s.models.reflector, *m.text_cond, cfg.temperature, rng, text::kDefaultMaxLen,
                                       text::Stage::kReflection);
        const auto e = text::parse_edit(*m.text);
        if (!is_real_edit(e)) {
          active[i][ju] = false;
          continue;
        }
        conds.push_back(editor_condition(e, current[i][ju]));
        unconds.push_back(editor_null_condition(current[i][ju]));
        rngs.push_back(std::move(rng));
        owners.emplace_back(i, ju);
      }
    }
    if (!conds.empty()) {
      auto paths = flow::sample_paths(s.models.editor, conds, unconds, cfg.samplers.edit, rngs);
      for (std::size_t k = 0; k < paths.size(); ++k) {
        const auto [i, j] = owners[k];
        current[i][j] = apply_residual(current[i][j], paths[k].final_state());
        batches[i].members[j].path = std::move(paths[k]);
      }
    }
    turn_batches.push_back(std::move(batches));
  }

  std::vector<MetricsRow> rows;
  MetricsRow reason_row{it, "reason"}, reflect_row{it, "reflect"};
  StatAccumulator reason_acc, reflect_acc;
  auto rh = reason_heads(s, cfg);
  auto fh = reflect_heads(s, cfg);
  int perfect = 0;
  for (std::size_t i = 0; i < P; ++i) {
    std::vector<double> terminal;
    for (int j = 0; j < G; ++j) {
      const double v = scenes::verify(current[i][static_cast<std::size_t>(j)], prompts[i]);
      terminal.push_back(v);
      reason_row.mean_reward += v;
      reflect_row.mean_v += v;
      perfect += scenes::is_perfect(v) ? 1 : 0;
      reason_row.mean_v += reason.groups[i].records[static_cast<std::size_t>(j)].rewards.v;
    }
    const auto adv = rl::group_advantages(terminal, cfg.rl.adv_delta);
    auto& batch = reason.groups[i].batch;
    batch.shared_advantages = adv;
    for (std::size_t j = 0; j < batch.members.size(); ++j) {
      batch.members[j].text_reward = terminal[j];
      batch.members[j].flow_reward = terminal[j];
    }
    reason_acc.add(rl::policy_update(batch, rh, cfg.rl));
    for (auto& batches : turn_batches) {
      auto& b = batches[i];
      b.shared_advantages = adv;
      for (std::size_t j = 0; j < b.members.size(); ++j) {
        b.members[j].text_reward = terminal[j];
        b.members[j].flow_reward = terminal[j];
      }
      reflect_acc.add(rl::policy_update(b, fh, cfg.rl));
    }
  }
  const double n = static_cast<double>(P) * G;
  reason_row.mean_reward /= n;
  reason_row.mean_v /= n;
  reason_row.perfect_frac = perfect / n;
  reason_acc.fill(reason_row);
  rows.push_back(reason_row);
  if (!turn_batches.empty()) {
    reflect_row.mean_reward = reason_row.mean_reward;
    reflect_row.mean_v /= n;
    reflect_row.perfect_frac = perfect / n;
    reflect_acc.fill(reflect_row);
    rows.push_back(reflect_row);
  }
  return rows;
}

}  // namespace

std::vector<MetricsRow> train_iteration(TrainState& state, const TrainConfig& cfg) {
  auto rows = cfg.mode == Mode::kTree ? tree_iteration(state, cfg) : full_iteration(state, cfg);
  ++state.iteration;
  return rows;
}

TrainResult train(const R3Models& warm_start, const TrainConfig& cfg, const IterationHook& hook) {
  cfg.validate();
  auto state = make_train_state(warm_start, cfg);
  TrainResult out;
  for (int step = 0; step < cfg.steps; ++step) {
    auto rows = train_iteration(state, cfg);
    if (hook) hook(state, rows);
    out.history.insert(out.history.end(), rows.begin(), rows.end());
  }
  out.models = std::move(state.models);
  return out;
}

}  // namespace r3::train
