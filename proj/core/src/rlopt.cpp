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

#include "r3/rlopt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace r3::rl {

void RlConfig::validate() const {
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw std::invalid_argument("clip_eps must be in (0, 1)");
  if (!(adv_delta > 0.0)) throw std::invalid_argument("adv_delta must be positive");
  if (group_size < 2) throw std::invalid_argument("group_size must be at least 2");
  if (kl_text < 0.0 || kl_flow < 0.0) throw std::invalid_argument("KL coefficients must be non-negative");
  if (text_weight < 0.0 || flow_weight < 0.0) throw std::invalid_argument("loss weights must be non-negative");
}

std::vector<double> group_advantages(std::span<const double> rewards, double delta) {
  if (rewards.empty()) return {};
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) out.push_back((r - mean) / (sd + delta));
  return out;
}

Surrogate clipped_surrogate(double logp_new, double logp_old, double adv, double eps) {
  Surrogate s;
  s.ratio = std::exp(logp_new - logp_old);
  if (!std::isfinite(s.ratio)) throw std::domain_error("non-finite importance ratio");
  const double clipped_ratio = std::clamp(s.ratio, 1.0 - eps, 1.0 + eps);
  const double unclipped = s.ratio * adv;
  const double clipped = clipped_ratio * adv;
  s.clipped = s.ratio < 1.0 - eps || s.ratio > 1.0 + eps;
  if (unclipped <= clipped) {
    s.value = unclipped;
    s.grad = unclipped;  // d(r A)/d log r = r A
  } else {
    s.value = clipped;
    s.grad = 0.0;
  }
  return s;
}

double categorical_kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("categorical_kl: size mismatch");
  double kl = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] <= 0.0) continue;
    kl += p[j] * (std::log(p[j]) - std::log(std::max(q[j], 1e-300)));
  }
  return kl;
}

TokenObjective token_objective(const text::SequenceEval& current, std::span<const double> logp_old,
                               const std::vector<Dist>& dists_ref, double adv, const RlConfig& cfg) {
  const std::size_t n = current.tokens.size();
  if (current.logprobs.size() != n || current.dists.size() != n || logp_old.size() != n) {
    throw std::invalid_argument("token_objective: length mismatch");
  }
  const bool with_kl = !dists_ref.empty();
  if (with_kl && dists_ref.size() != n) throw std::invalid_argument("token_objective: reference length mismatch");
  TokenObjective out;
  out.dlogits.assign(n, Dist{});
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  double ratio_sum = 0.0;
  int clipped = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const auto s = clipped_surrogate(current.logprobs[t], logp_old[t], adv, cfg.clip_eps);
    out.value += s.value * inv_n;
    ratio_sum += s.ratio;
    clipped += s.clipped ? 1 : 0;
    const auto& p = current.dists[t];
    const int a = text::emit_index(current.tokens[t]);
    auto& g = out.dlogits[t];
    for (int j = 0; j < text::kNumEmittable; ++j) {
      g[static_cast<std::size_t>(j)] = s.grad * inv_n * ((j == a ? 1.0 : 0.0) - p[static_cast<std::size_t>(j)]);
    }
    if (with_kl) {
      const auto& q = dists_ref[t];
      const double kl = categorical_kl(p, q);
      out.kl += kl * inv_n;
      out.value -= cfg.kl_text * kl * inv_n;
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (p[j] <= 0.0) continue;
        const double dlog = std::log(p[j]) - std::log(std::max(q[j], 1e-300)) - kl;
        g[j] -= cfg.kl_text * inv_n * p[j] * dlog;
      }
    }
  }
  out.mean_ratio = ratio_sum * inv_n;
  out.clip_fraction = static_cast<double>(clipped) * inv_n;
  return out;
}

FlowObjective flow_objective(std::span<const double> logp_new, std::span<const double> logp_old,
                             double adv, const std::vector<FlowKlTerm>& kl_terms, const RlConfig& cfg) {
  const std::size_t n = logp_new.size();
  if (logp_old.size() != n) throw std::invalid_argument("flow_objective: length mismatch");
  if (!kl_terms.empty() && kl_terms.size() != n) throw std::invalid_argument("flow_objective: KL length mismatch");
  FlowObjective out;
  out.dlogp.assign(n, 0.0);
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  double ratio_sum = 0.0;
  int clipped = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const auto s = clipped_surrogate(logp_new[k], logp_old[k], adv, cfg.clip_eps);
    out.value += s.value * inv_n;
    out.dlogp[k] = s.grad * inv_n;
    ratio_sum += s.ratio;
    clipped += s.clipped ? 1 : 0;
  }
  for (const auto& term : kl_terms) {
    if (term.mean_new.size() != term.mean_ref.size()) throw std::invalid_argument("flow_objective: mean size mismatch");
    if (!(term.std > 0.0)) throw std::invalid_argument("flow_objective: std must be positive");
    const double inv_var = 1.0 / (term.std * term.std);
    double sq = 0.0;
    std::vector<double> d(term.mean_new.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double diff = term.mean_new[i] - term.mean_ref[i];
      sq += diff * diff;
      d[i] = -cfg.kl_flow * inv_n * diff * inv_var;
    }
    const double kl = 0.5 * sq * inv_var;
    out.kl += kl * inv_n;
    out.value -= cfg.kl_flow * kl * inv_n;
    out.dmean.push_back(std::move(d));
  }
  out.mean_ratio = ratio_sum * inv_n;
  out.clip_fraction = static_cast<double>(clipped) * inv_n;
  return out;
}

namespace {

std::vector<double> head_advantages(const GroupBatch& group, bool text_head, double delta) {
  if (group.shared_advantages) {
    if (group.shared_advantages->size() != group.members.size()) {
      throw std::invalid_argument("shared_advantages size does not match the group");
    }
    return *group.shared_advantages;
  }
  std::vector<double> rewards;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < group.members.size(); ++i) {
    const auto& m = group.members[i];
    if (text_head ? m.text.has_value() : m.path.has_value()) {
      rewards.push_back(text_head ? m.text_reward : m.flow_reward);
      idx.push_back(i);
    }
  }
  std::vector<double> out(group.members.size(), 0.0);
  if (rewards.size() < 2) return out;  // a lone sample has zero advantage
  const auto adv = group_advantages(rewards, delta);
  for (std::size_t j = 0; j < idx.size(); ++j) out[idx[j]] = adv[j];
  return out;
}

struct HeadStats {
  double clip_sum = 0.0;
  double ratio_sum = 0.0;
  double kl_sum = 0.0;
  int units = 0;    // tokens or SDE steps
  int samples = 0;  // sequences or paths
};

HeadStats update_text(const GroupBatch& group, const std::vector<double>& adv, PolicyHeads& heads,
                      const RlConfig& cfg, double& grad_norm) {
  HeadStats st;
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < group.members.size(); ++i) {
    if (group.members[i].text) members.push_back(i);
  }
  if (members.empty()) return st;
  auto grads = heads.text->params.zeros_like();
  const double scale = -cfg.text_weight / static_cast<double>(members.size());
  const bool with_kl = cfg.kl_text > 0.0 && heads.text_ref != nullptr;
  for (std::size_t i : members) {
    const auto& m = group.members[i];
    if (!m.text_cond) throw std::invalid_argument("policy_update: text sample without condition");
    const auto& seq = *m.text;
    if (seq.tokens.empty()) continue;
    const auto cur = text::sequence_logprobs(*heads.text, *m.text_cond, seq.tokens, seq.temperature);
    std::vector<Dist> ref;
    if (with_kl) ref = text::sequence_logprobs(*heads.text_ref, *m.text_cond, seq.tokens, seq.temperature).dists;
    auto obj = token_objective(cur, seq.logprobs, ref, adv[i], cfg);
    for (auto& row : obj.dlogits) {
      for (double& g : row) g *= scale;
    }
    text::backward_scaled_logits(*heads.text, cur, obj.dlogits, grads);
    const double n = static_cast<double>(seq.tokens.size());
    st.clip_sum += obj.clip_fraction * n;
    st.ratio_sum += obj.mean_ratio * n;
    st.units += static_cast<int>(seq.tokens.size());
    st.kl_sum += obj.kl;
    ++st.samples;
  }
  grad_norm = std::sqrt(grads.squared_norm());
  if (heads.text_adam) nn::adam_step(heads.text->params, grads, *heads.text_adam);
  return st;
}

HeadStats update_flow(const GroupBatch& group, const std::vector<double>& adv, PolicyHeads& heads,
                      const RlConfig& cfg, double& grad_norm) {
  HeadStats st;
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < group.members.size(); ++i) {
    if (group.members[i].path) members.push_back(i);
  }
  if (members.empty()) return st;
  const auto& sampler = heads.flow_sampler;
  const auto& first = *group.members[members.front()].path;
  std::vector<const flow::PathRecord*> paths;
  for (std::size_t i : members) {
    const auto& p = *group.members[i].path;
    if (p.num_steps != first.num_steps || p.sde_lo != first.sde_lo || p.sde_hi != first.sde_hi) {
      throw std::invalid_argument("policy_update: paths in a group must share a grid");
    }
    paths.push_back(&p);
  }
  const int n_sde = first.num_sde_steps();
  if (n_sde == 0) return st;
  const bool with_kl = cfg.kl_flow > 0.0 && heads.flow_ref != nullptr;
  const double scale = -cfg.flow_weight / static_cast<double>(members.size());
  const double inv_n = 1.0 / static_cast<double>(n_sde);
  auto grads = heads.flow->params.zeros_like();
  const auto D = static_cast<std::size_t>(heads.flow->latent_dim);
  std::vector<double> kl_per_path(paths.size(), 0.0);
  for (int k = 0; k < first.num_steps; ++k) {
    if (first.kinds[static_cast<std::size_t>(k)] != flow::StepKind::kSde) continue;
    const auto tape = flow::step_means(*heads.flow, paths, k, sampler);
    std::optional<flow::MeanTape> ref;
    if (with_kl) ref = flow::step_means(*heads.flow_ref, paths, k, sampler);
    nn::Tensor dmean(tape.mean.shape());
    const double inv_var = 1.0 / (tape.std * tape.std);
    for (std::size_t b = 0; b < paths.size(); ++b) {
      const auto& rec = *paths[b]->sde[static_cast<std::size_t>(k)];
      const auto& next = paths[b]->states[static_cast<std::size_t>(k) + 1];
      const auto mu = tape.mean.row(b);
      const double lp = flow::transition_logprob(next, mu, tape.std);
      const auto s = clipped_surrogate(lp, rec.log_prob, adv[members[b]], cfg.clip_eps);
      st.clip_sum += s.clipped ? 1.0 : 0.0;
      st.ratio_sum += s.ratio;
      ++st.units;
      auto d = dmean.row(b);
      // d log N(x'; mu, s^2) / d mu = (x' - mu) / s^2
      for (std::size_t j = 0; j < D; ++j) d[j] = s.grad * inv_n * (next[j] - mu[j]) * inv_var;
      if (with_kl) {
        const auto mr = ref->mean.row(b);
        double sq = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
          const double diff = mu[j] - mr[j];
          sq += diff * diff;
          d[j] -= cfg.kl_flow * inv_n * diff * inv_var;
        }
        kl_per_path[b] += 0.5 * sq * inv_var * inv_n;
      }
      for (std::size_t j = 0; j < D; ++j) d[j] *= scale;
    }
    flow::backward_means(*heads.flow, tape, dmean, sampler, grads);
  }
  for (double kl : kl_per_path) st.kl_sum += kl;
  st.samples = static_cast<int>(paths.size());
  grad_norm = std::sqrt(grads.squared_norm());
  if (heads.flow_adam) nn::adam_step(heads.flow->params, grads, *heads.flow_adam);
  return st;
}

}  // namespace

UpdateStats policy_update(const GroupBatch& group, PolicyHeads& heads, const RlConfig& cfg) {
  cfg.validate();
  UpdateStats out;
  if (group.members.empty()) return out;
  int nt = 0, nf = 0;
  for (const auto& m : group.members) {
    if (m.text) {
      out.mean_text_reward += m.text_reward;
      ++nt;
    }
    if (m.path) {
      out.mean_flow_reward += m.flow_reward;
      ++nf;
    }
  }
  if (nt) out.mean_text_reward /= nt;
  if (nf) out.mean_flow_reward /= nf;

  HeadStats ts, fs;
  if (heads.text && nt) ts = update_text(group, head_advantages(group, true, cfg.adv_delta), heads, cfg, out.text_grad_norm);
  if (heads.flow && nf) fs = update_flow(group, head_advantages(group, false, cfg.adv_delta), heads, cfg, out.flow_grad_norm);
  out.text_samples = ts.samples;
  out.flow_samples = fs.samples;
  const int units = ts.units + fs.units;
  if (units) {
    out.clip_fraction = (ts.clip_sum + fs.clip_sum) / units;
    out.mean_ratio = (ts.ratio_sum + fs.ratio_sum) / units;
  }
  if (ts.samples) out.kl_text = ts.kl_sum / ts.samples;
  if (fs.samples) out.kl_flow = fs.kl_sum / fs.samples;
  return out;
}

}  // namespace r3::rl
