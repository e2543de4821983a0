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

// Rectified-flow generator over scene latents.
//
// Interpolant x_t = (1 - t) x0 + t x1 with x0 data and x1 ~ N(0, I); the
// network regresses v = x1 - x0. Sampling integrates from t = 1 to t = 0 on
// the grid t_k = 1 - k/T. Steps inside the SDE window use the Euler-Maruyama
// step of the marginal-preserving SDE
//
//   mean = x - (v + sigma^2 / (2t) * (x + (1 - t) v)) dt,  std = sigma sqrt(dt)
//   sigma = a sqrt(t' / (1 - t')),  t' = clamp(t, t_clamp, 1 - t_clamp)
//
// (the 1/(2t) factor also uses t'), and every other step is plain Euler.

#include <optional>
#include <random>
#include <span>
#include <vector>

#include "r3/nncore.hpp"

namespace r3::flow {

/// Velocity network over concat(x [D], t [1], cond [C]).
struct FlowModel {
  nn::MlpSpec spec;
  nn::ParamSet params;
  int latent_dim = 0;
  int cond_dim = 0;
};

FlowModel make_flow_model(int latent_dim, int cond_dim, const std::vector<int>& hidden,
                          nn::Rng& rng);

struct SamplerConfig {
  int num_steps = 10;
  double noise_scale = 0.7;
  int sde_lo = 0;
  int sde_hi = -1;  // -1 means num_steps
  double guidance = 1.5;
  double t_clamp = 0.0;  // 0 means 1/(2T)

  int window_hi() const { return sde_hi < 0 ? num_steps : sde_hi; }
  double clamp_value() const { return t_clamp > 0.0 ? t_clamp : 0.5 / num_steps; }
  bool is_sde_step(int k) const { return k >= sde_lo && k < window_hi(); }
  /// Throws std::invalid_argument when the window or clamp is out of range.
  void validate() const;
};

double noise_sigma(double a, double t, double t_clamp);

/// v_uncond + w (v_cond - v_uncond); exact for w = 0 and w = 1.
std::vector<double> cfg_velocity(std::span<const double> v_cond, std::span<const double> v_uncond,
                                 double w);

/// Batched velocity for rows of x sharing time t. cond has one row per x row.
nn::Tensor velocity(const FlowModel& model, const nn::Tensor& x, double t, const nn::Tensor& cond,
                    nn::MlpCache* cache = nullptr);

struct StepResult {
  std::vector<double> next;
  std::vector<double> mean;
  double std = 0.0;
};

/// One step from velocity v. With z absent (or sigma == 0) this is x - v dt.
StepResult step_from_velocity(std::span<const double> x, std::span<const double> v, double t,
                              double dt, double a, double t_clamp,
                              std::optional<std::span<const double>> z);

/// sde_step for a single state: evaluates the guided velocity, then steps.
StepResult sde_step(const FlowModel& model, std::span<const double> x, std::span<const double> cond,
                    std::span<const double> uncond, double t, double dt, const SamplerConfig& cfg,
                    std::optional<std::span<const double>> z);

double transition_logprob(std::span<const double> next, std::span<const double> mean, double std);

enum class StepKind { kOde, kSde };

struct SdeStepStats {
  std::vector<double> mean;
  double std = 0.0;
  double log_prob = 0.0;
};

struct PathRecord {
  std::vector<std::vector<double>> states;  // T + 1, states[0] at t = 1
  std::vector<StepKind> kinds;              // T
  std::vector<std::optional<SdeStepStats>> sde;  // T, engaged for SDE steps
  std::vector<double> cond;
  std::vector<double> uncond;
  int num_steps = 0;
  int sde_lo = 0;
  int sde_hi = 0;

  const std::vector<double>& final_state() const { return states.back(); }
  int num_sde_steps() const;
};

/// t_k = 1 - k/T for k = 0..T.
std::vector<double> time_grid(int num_steps);

PathRecord sample_path(const FlowModel& model, std::span<const double> cond,
                       std::span<const double> uncond, const SamplerConfig& cfg, nn::Rng& rng);

/// One path per (cond, uncond, rng) triple, evaluated as a batch. Each path
/// consumes only its own generator.
std::vector<PathRecord> sample_paths(const FlowModel& model, const std::vector<std::vector<double>>& conds,
                                     const std::vector<std::vector<double>>& unconds,
                                     const SamplerConfig& cfg, std::vector<nn::Rng>& rngs);

/// Per-SDE-step log-probs of the recorded transitions under current params.
std::vector<double> path_logprobs(const FlowModel& model, const PathRecord& path,
                                  const SamplerConfig& cfg);

/// Guided means recomputed at every recorded SDE step of a batch of paths
/// that share a grid, with what is needed to backpropagate through them.
struct MeanTape {
  int step = 0;
  double t = 0.0;
  double dt = 0.0;
  double sigma = 0.0;
  double std = 0.0;
  double drift_coef = 0.0;  // d mean / d v
  nn::Tensor x;              // [B, D]
  nn::Tensor mean;           // [B, D]
  nn::MlpCache cond_cache;
  nn::MlpCache uncond_cache;
  bool has_uncond = false;
};

/// Mean of every path in `paths` at grid step `k` (recorded or not).
MeanTape step_means(const FlowModel& model, const std::vector<const PathRecord*>& paths, int k,
                    const SamplerConfig& cfg);
/// Accumulates into `grads` the parameter gradient of sum(dmean * mean).
void backward_means(const FlowModel& model, const MeanTape& tape, const nn::Tensor& dmean,
                    const SamplerConfig& cfg, nn::ParamSet& grads);

/// Flow-matching minibatch. Rows of x0, x1, cond align; t has one entry per row.
struct FmBatch {
  nn::Tensor x0;
  nn::Tensor x1;
  std::vector<double> t;
  nn::Tensor cond;
};

struct FmResult {
  double loss = 0.0;
  nn::ParamSet grads;
};

/// Mean over rows of ||(x1 - x0) - v(x_t, t, cond)||^2 and its gradient.
FmResult fm_loss(const FlowModel& model, const FmBatch& batch);

}  // namespace r3::flow
