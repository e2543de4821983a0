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

#include "r3/flowgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace r3::flow {
namespace {

nn::Tensor pack_inputs(const FlowModel& model, const nn::Tensor& x, std::span<const double> t,
                       const nn::Tensor& cond) {
  const std::size_t B = x.rows();
  const auto D = static_cast<std::size_t>(model.latent_dim);
  const auto C = static_cast<std::size_t>(model.cond_dim);
  if (x.cols() != D || cond.cols() != C || cond.rows() != B) {
    throw std::invalid_argument("flow model input dimension mismatch");
  }
  nn::Tensor in({B, D + 1 + C});
  for (std::size_t b = 0; b < B; ++b) {
    auto row = in.row(b);
    std::copy_n(x.row(b).begin(), D, row.begin());
    row[D] = t.size() == 1 ? t[0] : t[b];
    std::copy_n(cond.row(b).begin(), C, row.begin() + static_cast<std::ptrdiff_t>(D + 1));
  }
  return in;
}

nn::Tensor rows_of(const std::vector<std::vector<double>>& rows, std::size_t width) {
  nn::Tensor t({rows.size(), width});
  for (std::size_t b = 0; b < rows.size(); ++b) {
    if (rows[b].size() != width) throw std::invalid_argument("row width mismatch");
    std::copy(rows[b].begin(), rows[b].end(), t.row(b).begin());
  }
  return t;
}

// Guided velocity for a batch; the caches are filled when requested.
nn::Tensor guided_velocity(const FlowModel& model, const nn::Tensor& x, double t,
                           const nn::Tensor& cond, const nn::Tensor& uncond, double w,
                           nn::MlpCache* cond_cache, nn::MlpCache* uncond_cache) {
  nn::Tensor vc = velocity(model, x, t, cond, cond_cache);
  if (w == 1.0) return vc;
  nn::Tensor vu = velocity(model, x, t, uncond, uncond_cache);
  if (w == 0.0) return vu;
  for (std::size_t k = 0; k < vc.size(); ++k) vc[k] = vu[k] + w * (vc[k] - vu[k]);
  return vc;
}

double drift_scale(double sigma, double t, double t_clamp) {
  const double tc = std::clamp(t, t_clamp, 1.0 - t_clamp);
  return sigma * sigma / (2.0 * tc);
}

}  // namespace

FlowModel make_flow_model(int latent_dim, int cond_dim, const std::vector<int>& hidden,
                          nn::Rng& rng) {
  FlowModel model;
  model.latent_dim = latent_dim;
  model.cond_dim = cond_dim;
  model.spec.activation = nn::Activation::kSilu;
  model.spec.layer_dims.push_back(latent_dim + 1 + cond_dim);
  model.spec.layer_dims.insert(model.spec.layer_dims.end(), hidden.begin(), hidden.end());
  model.spec.layer_dims.push_back(latent_dim);
  model.params = nn::init_params(model.spec, rng);
  return model;
}

void SamplerConfig::validate() const {
  if (num_steps < 1) throw std::invalid_argument("sampler num_steps must be positive");
  if (noise_scale < 0.0) throw std::invalid_argument("sampler noise_scale must be >= 0");
  if (sde_lo < 0 || sde_lo > window_hi() || window_hi() > num_steps) {
    throw std::invalid_argument("sampler SDE window must satisfy 0 <= lo <= hi <= T");
  }
  const double c = clamp_value();
  if (!(c > 0.0 && c < 0.5)) throw std::invalid_argument("sampler t_clamp must be in (0, 0.5)");
}

double noise_sigma(double a, double t, double t_clamp) {
  const double tc = std::clamp(t, t_clamp, 1.0 - t_clamp);
  return a * std::sqrt(tc / (1.0 - tc));
}

std::vector<double> cfg_velocity(std::span<const double> v_cond, std::span<const double> v_uncond,
                                 double w) {
  if (v_cond.size() != v_uncond.size()) throw std::invalid_argument("cfg_velocity: size mismatch");
  if (w == 1.0) return {v_cond.begin(), v_cond.end()};
  if (w == 0.0) return {v_uncond.begin(), v_uncond.end()};
  std::vector<double> out(v_cond.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v_uncond[i] + w * (v_cond[i] - v_uncond[i]);
  return out;
}

nn::Tensor velocity(const FlowModel& model, const nn::Tensor& x, double t, const nn::Tensor& cond,
                    nn::MlpCache* cache) {
  const double ts[1] = {t};
  auto out = nn::forward(model.spec, model.params, pack_inputs(model, x, ts, cond));
  if (cache != nullptr) *cache = std::move(out.cache);
  return std::move(out.output);
}

StepResult step_from_velocity(std::span<const double> x, std::span<const double> v, double t,
                              double dt, double a, double t_clamp,
                              std::optional<std::span<const double>> z) {
  if (!(t > 0.0)) throw std::invalid_argument("sde_step requires t > 0");
  if (x.size() != v.size()) throw std::invalid_argument("sde_step: size mismatch");
  StepResult r;
  r.next.resize(x.size());
  const double sigma = noise_sigma(a, t, t_clamp);
  if (!z || sigma == 0.0) {
    for (std::size_t i = 0; i < x.size(); ++i) r.next[i] = x[i] - v[i] * dt;
    r.mean = r.next;
    return r;
  }
  if (z->size() != x.size()) throw std::invalid_argument("sde_step: noise size mismatch");
  const double c = drift_scale(sigma, t, t_clamp);
  r.std = sigma * std::sqrt(dt);
  r.mean.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    r.mean[i] = x[i] - (v[i] + c * (x[i] + (1.0 - t) * v[i])) * dt;
    r.next[i] = r.mean[i] + r.std * (*z)[i];
  }
  return r;
}

StepResult sde_step(const FlowModel& model, std::span<const double> x, std::span<const double> cond,
                    std::span<const double> uncond, double t, double dt, const SamplerConfig& cfg,
                    std::optional<std::span<const double>> z) {
  nn::Tensor xt({1, x.size()}, std::vector<double>(x.begin(), x.end()));
  nn::Tensor ct({1, cond.size()}, std::vector<double>(cond.begin(), cond.end()));
  nn::Tensor ut({1, uncond.size()}, std::vector<double>(uncond.begin(), uncond.end()));
  const nn::Tensor v = guided_velocity(model, xt, t, ct, ut, cfg.guidance, nullptr, nullptr);
  return step_from_velocity(x, v.values(), t, dt, cfg.noise_scale, cfg.clamp_value(), z);
}

double transition_logprob(std::span<const double> next, std::span<const double> mean, double std) {
  if (!(std > 0.0)) throw std::invalid_argument("transition_logprob requires std > 0");
  if (next.size() != mean.size()) throw std::invalid_argument("transition_logprob: size mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < next.size(); ++i) {
    const double d = next[i] - mean[i];
    sq += d * d;
  }
  const double D = static_cast<double>(next.size());
  return -0.5 * D * std::log(2.0 * std::numbers::pi * std * std) - sq / (2.0 * std * std);
}

int PathRecord::num_sde_steps() const {
  return static_cast<int>(std::count(kinds.begin(), kinds.end(), StepKind::kSde));
}

std::vector<double> time_grid(int num_steps) {
  std::vector<double> t(static_cast<std::size_t>(num_steps) + 1);
  for (int k = 0; k <= num_steps; ++k) t[static_cast<std::size_t>(k)] = 1.0 - static_cast<double>(k) / num_steps;
  return t;
}

std::vector<PathRecord> sample_paths(const FlowModel& model, const std::vector<std::vector<double>>& conds,
                                     const std::vector<std::vector<double>>& unconds,
                                     const SamplerConfig& cfg, std::vector<nn::Rng>& rngs) {
  cfg.validate();
  const std::size_t B = conds.size();
  if (unconds.size() != B || rngs.size() != B) throw std::invalid_argument("sample_paths: batch mismatch");
  const auto D = static_cast<std::size_t>(model.latent_dim);
  const auto C = static_cast<std::size_t>(model.cond_dim);
  const int T = cfg.num_steps;
  const auto grid = time_grid(T);
  const nn::Tensor cond = rows_of(conds, C);
  const nn::Tensor uncond = rows_of(unconds, C);

  std::vector<PathRecord> paths(B);
  nn::Tensor x({B, D});
  // One distribution per path: libstdc++ caches the second normal of each pair.
  std::vector<std::normal_distribution<double>> normal(B);
  for (std::size_t b = 0; b < B; ++b) {
    auto& p = paths[b];
    p.cond = conds[b];
    p.uncond = unconds[b];
    p.num_steps = T;
    p.sde_lo = cfg.sde_lo;
    p.sde_hi = cfg.window_hi();
    for (double& v : x.row(b)) v = normal[b](rngs[b]);
    p.states.emplace_back(x.row(b).begin(), x.row(b).end());
  }
  std::vector<double> z(D);
  for (int k = 0; k < T; ++k) {
    const double t = grid[static_cast<std::size_t>(k)];
    const double dt = t - grid[static_cast<std::size_t>(k) + 1];
    const bool sde = cfg.is_sde_step(k) && cfg.noise_scale > 0.0;
    const nn::Tensor v = guided_velocity(model, x, t, cond, uncond, cfg.guidance, nullptr, nullptr);
    for (std::size_t b = 0; b < B; ++b) {
      auto& p = paths[b];
      std::optional<std::span<const double>> noise;
      if (sde) {
        for (double& zi : z) zi = normal[b](rngs[b]);
        noise = std::span<const double>(z);
      }
      StepResult r = step_from_velocity(x.row(b), v.row(b), t, dt, cfg.noise_scale,
                                        cfg.clamp_value(), noise);
      p.kinds.push_back(sde ? StepKind::kSde : StepKind::kOde);
      if (sde) {
        const double lp = transition_logprob(r.next, r.mean, r.std);
        p.sde.push_back(SdeStepStats{std::move(r.mean), r.std, lp});
      } else {
        p.sde.push_back(std::nullopt);
      }
      std::copy(r.next.begin(), r.next.end(), x.row(b).begin());
      p.states.push_back(std::move(r.next));
    }
  }
  return paths;
}

PathRecord sample_path(const FlowModel& model, std::span<const double> cond,
                       std::span<const double> uncond, const SamplerConfig& cfg, nn::Rng& rng) {
  std::vector<nn::Rng> rngs = {rng};
  auto paths = sample_paths(model, {std::vector<double>(cond.begin(), cond.end())},
                            {std::vector<double>(uncond.begin(), uncond.end())}, cfg, rngs);
  rng = rngs.front();
  return std::move(paths.front());
}

MeanTape step_means(const FlowModel& model, const std::vector<const PathRecord*>& paths, int k,
                    const SamplerConfig& cfg) {
  const std::size_t B = paths.size();
  const auto D = static_cast<std::size_t>(model.latent_dim);
  const auto C = static_cast<std::size_t>(model.cond_dim);
  const auto grid = time_grid(cfg.num_steps);
  MeanTape tape;
  tape.step = k;
  tape.t = grid[static_cast<std::size_t>(k)];
  tape.dt = tape.t - grid[static_cast<std::size_t>(k) + 1];
  tape.sigma = noise_sigma(cfg.noise_scale, tape.t, cfg.clamp_value());
  tape.std = tape.sigma * std::sqrt(tape.dt);
  const double c = drift_scale(tape.sigma, tape.t, cfg.clamp_value());
  tape.drift_coef = -(1.0 + c * (1.0 - tape.t)) * tape.dt;
  tape.x = nn::Tensor({B, D});
  nn::Tensor cond({B, C}), uncond({B, C});
  for (std::size_t b = 0; b < B; ++b) {
    const auto& p = *paths[b];
    if (p.num_steps != cfg.num_steps) throw std::invalid_argument("path grid does not match sampler");
    std::copy(p.states[static_cast<std::size_t>(k)].begin(), p.states[static_cast<std::size_t>(k)].end(),
              tape.x.row(b).begin());
    std::copy(p.cond.begin(), p.cond.end(), cond.row(b).begin());
    std::copy(p.uncond.begin(), p.uncond.end(), uncond.row(b).begin());
  }
  tape.has_uncond = cfg.guidance != 1.0;
  const nn::Tensor v = guided_velocity(model, tape.x, tape.t, cond, uncond, cfg.guidance,
                                       &tape.cond_cache, &tape.uncond_cache);
  tape.mean = nn::Tensor({B, D});
  for (std::size_t i = 0; i < tape.mean.size(); ++i) {
    tape.mean[i] = tape.x[i] - (v[i] + c * (tape.x[i] + (1.0 - tape.t) * v[i])) * tape.dt;
  }
  return tape;
}

void backward_means(const FlowModel& model, const MeanTape& tape, const nn::Tensor& dmean,
                    const SamplerConfig& cfg, nn::ParamSet& grads) {
  const double w = cfg.guidance;
  nn::Tensor dv(dmean.shape());
  for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = dmean[i] * tape.drift_coef;
  if (!tape.has_uncond) {
    nn::backward_accumulate(model.spec, model.params, tape.cond_cache, dv, grads);
    return;
  }
  nn::Tensor dvc(dv.shape()), dvu(dv.shape());
  for (std::size_t i = 0; i < dv.size(); ++i) {
    dvc[i] = w * dv[i];
    dvu[i] = (1.0 - w) * dv[i];
  }
  if (w != 0.0) nn::backward_accumulate(model.spec, model.params, tape.cond_cache, dvc, grads);
  nn::backward_accumulate(model.spec, model.params, tape.uncond_cache, dvu, grads);
}

std::vector<double> path_logprobs(const FlowModel& model, const PathRecord& path,
                                  const SamplerConfig& cfg) {
  if (path.num_steps != cfg.num_steps || path.kinds.size() != static_cast<std::size_t>(cfg.num_steps)) {
    throw std::invalid_argument("path_logprobs: path grid does not match sampler");
  }
  std::vector<double> out;
  for (int k = 0; k < cfg.num_steps; ++k) {
    if (path.kinds[static_cast<std::size_t>(k)] != StepKind::kSde) continue;
    const MeanTape tape = step_means(model, {&path}, k, cfg);
    out.push_back(transition_logprob(path.states[static_cast<std::size_t>(k) + 1], tape.mean.row(0),
                                     tape.std));
  }
  return out;
}

FmResult fm_loss(const FlowModel& model, const FmBatch& batch) {
  const std::size_t B = batch.x0.rows();
  if (B == 0) throw std::invalid_argument("fm_loss: empty batch");
  if (batch.x1.rows() != B || batch.t.size() != B || batch.cond.rows() != B) {
    throw std::invalid_argument("fm_loss: batch size mismatch");
  }
  nn::Tensor xt(batch.x0.shape());
  for (std::size_t b = 0; b < B; ++b) {
    const double t = batch.t[b];
    for (std::size_t d = 0; d < xt.cols(); ++d) {
      xt.at(b, d) = (1.0 - t) * batch.x0.at(b, d) + t * batch.x1.at(b, d);
    }
  }
  auto out = nn::forward(model.spec, model.params, pack_inputs(model, xt, batch.t, batch.cond));
  FmResult result;
  nn::Tensor dv(out.output.shape());
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t i = 0; i < dv.size(); ++i) {
    const double r = (batch.x1[i] - batch.x0[i]) - out.output[i];
    result.loss += r * r * inv_b;
    dv[i] = -2.0 * r * inv_b;
  }
  if (!std::isfinite(result.loss)) throw std::domain_error("fm_loss is not finite");
  result.grads = model.params.zeros_like();
  nn::backward_accumulate(model.spec, model.params, out.cache, dv, result.grads);
  return result;
}

}  // namespace r3::flow
