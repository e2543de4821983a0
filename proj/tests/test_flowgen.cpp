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
#include <numeric>

#include "r3/flowgen.hpp"
#include "support.hpp"

namespace r3::flow {
namespace {

FlowModel small_model(std::uint64_t seed, int d = 3, int c = 2) {
  nn::Rng rng(seed);
  return make_flow_model(d, c, {8, 8}, rng);
}

TEST(NoiseSigma, ClosedForms) {
  EXPECT_EQ(noise_sigma(0.7, 0.5, 0.05), 0.7);
  EXPECT_EQ(noise_sigma(1.0, 0.8, 0.05), 2.0);
  EXPECT_EQ(noise_sigma(0.0, 0.3, 0.05), 0.0);
  // t clamped away from the singular ends
  EXPECT_EQ(noise_sigma(1.0, 1.0, 0.05), noise_sigma(1.0, 0.95, 0.05));
  EXPECT_EQ(noise_sigma(1.0, 0.0, 0.05), noise_sigma(1.0, 0.05, 0.05));
}

TEST(CfgVelocity, Interpolation) {
  std::vector<double> c{1.0, -2.0}, u{0.0, 4.0};
  EXPECT_EQ(cfg_velocity(c, u, 1.0), c);
  EXPECT_EQ(cfg_velocity(c, u, 0.0), u);
  EXPECT_EQ(cfg_velocity(std::vector<double>{1.0}, std::vector<double>{0.0}, 1.5)[0], 1.5);
  EXPECT_THROW(cfg_velocity(c, std::vector<double>{1.0}, 1.5), std::invalid_argument);
}

TEST(SdeStep, ScalarHandEvaluation) {
  const std::vector<double> x{1.0}, v{0.0}, z{0.0};
  auto r = step_from_velocity(x, v, 0.5, 0.1, 0.7, 0.05, std::span<const double>(z));
  EXPECT_NEAR(r.mean[0], 0.951, 1e-15);
  EXPECT_NEAR(r.std, 0.7 * std::sqrt(0.1), 1e-15);
  EXPECT_NEAR(r.std, 0.22136, 1e-5);
  EXPECT_EQ(r.next[0], r.mean[0]);
}

TEST(SdeStep, ZeroNoiseIsEuler) {
  const std::vector<double> x{0.3, -1.2}, v{2.0, 0.5}, z{0.9, -0.4};
  auto r = step_from_velocity(x, v, 0.6, 0.1, 0.0, 0.05, std::span<const double>(z));
  EXPECT_EQ(r.next[0], 0.3 - 2.0 * 0.1);
  EXPECT_EQ(r.next[1], -1.2 - 0.5 * 0.1);
  EXPECT_THROW(step_from_velocity(x, v, 0.0, 0.1, 0.7, 0.05, std::nullopt), std::invalid_argument);
}

TEST(SdeStep, MonteCarloMoments) {
  const std::vector<double> x{0.4}, v{-0.3};
  nn::Rng rng(17);
  std::normal_distribution<double> n;
  const int N = 100000;
  double sum = 0.0, sq = 0.0;
  StepResult ref;
  for (int i = 0; i < N; ++i) {
    const std::vector<double> z{n(rng)};
    ref = step_from_velocity(x, v, 0.7, 0.05, 0.7, 0.05, std::span<const double>(z));
    sum += ref.next[0];
    sq += ref.next[0] * ref.next[0];
  }
  const double mean = sum / N;
  const double sd = std::sqrt(sq / N - mean * mean);
  EXPECT_LT(std::abs(mean - ref.mean[0]), 3.0 * ref.std / std::sqrt(N));
  // standard error of a sample std is about sd / sqrt(2N)
  EXPECT_LT(std::abs(sd - ref.std), 3.0 * ref.std / std::sqrt(2.0 * N));
}

TEST(TransitionLogprob, ClosedForms) {
  const std::vector<double> m2{0.5, -0.5};
  EXPECT_NEAR(transition_logprob(m2, m2, 1.0), -std::log(2.0 * M_PI), 1e-12);
  EXPECT_NEAR(transition_logprob(std::vector<double>{1.0}, std::vector<double>{0.0}, 1.0),
              -0.5 * std::log(2.0 * M_PI) - 0.5, 1e-12);
  EXPECT_THROW(transition_logprob(m2, m2, 0.0), std::invalid_argument);
}

TEST(TransitionLogprob, NormalizesAtD1) {
  // Uniform proposal over mean +- 8 std.
  const double mean = 0.3, sd = 0.4, half = 8.0 * sd;
  nn::Rng rng(23);
  std::uniform_real_distribution<double> u(mean - half, mean + half);
  const int N = 100000;
  double acc = 0.0;
  for (int i = 0; i < N; ++i) {
    acc += std::exp(transition_logprob(std::vector<double>{u(rng)}, std::vector<double>{mean}, sd));
  }
  EXPECT_NEAR(acc / N * 2.0 * half, 1.0, 0.02);
}

TEST(TimeGrid, StrictlyDecreasing) {
  for (int T : {1, 10, 20}) {
    auto g = time_grid(T);
    ASSERT_EQ(g.size(), static_cast<std::size_t>(T + 1));
    EXPECT_EQ(g.front(), 1.0);
    EXPECT_EQ(g.back(), 0.0);
    for (int k = 0; k < T; ++k) EXPECT_GT(g[k], g[k + 1]);
  }
}

TEST(SamplerConfig, Validation) {
  SamplerConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.clamp_value(), 0.05);
  c.sde_lo = 5;
  c.sde_hi = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SamplerConfig{};
  c.t_clamp = 0.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SamplerConfig{};
  c.sde_hi = 11;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(SamplePath, ZeroNoiseEqualsEulerBitwise) {
  auto model = small_model(3);
  const std::vector<double> cond{0.5, -1.0}, uncond{0.0, 0.0};
  SamplerConfig cfg{10, 0.0, 0, -1, 1.5, 0.0};
  nn::Rng rng(8);
  auto path = sample_path(model, cond, uncond, cfg, rng);
  ASSERT_EQ(path.states.size(), 11u);
  EXPECT_EQ(path.num_sde_steps(), 0);

  std::vector<double> x = path.states.front();
  const auto grid = time_grid(10);
  for (int k = 0; k < 10; ++k) {
    nn::Tensor xt({1, 3}, x), ct({1, 2}, cond), ut({1, 2}, uncond);
    auto vc = velocity(model, xt, grid[k], ct);
    auto vu = velocity(model, xt, grid[k], ut);
    auto v = cfg_velocity(vc.values(), vu.values(), 1.5);
    const double dt = grid[k] - grid[k + 1];
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = x[i] - v[i] * dt;
    EXPECT_EQ(x, path.states[static_cast<std::size_t>(k) + 1]) << "step " << k;
  }
}

TEST(SamplePath, WindowsAndDeterminism) {
  auto model = small_model(4);
  const std::vector<double> cond{1.0, 0.0}, uncond{0.0, 0.0};
  SamplerConfig full{10, 0.7, 0, -1, 1.5, 0.0};
  nn::Rng r1(2), r2(2);
  auto a = sample_path(model, cond, uncond, full, r1);
  auto b = sample_path(model, cond, uncond, full, r2);
  EXPECT_EQ(a.states, b.states);
  EXPECT_EQ(a.num_sde_steps(), 10);
  for (const auto& s : a.sde) {
    ASSERT_TRUE(s.has_value());
    EXPECT_TRUE(std::isfinite(s->log_prob));
  }

  SamplerConfig none = full;
  none.sde_lo = none.sde_hi = 4;
  nn::Rng r3(2), r4(2);
  auto c = sample_path(model, cond, uncond, none, r3);
  auto d = sample_path(model, cond, uncond, none, r4);
  EXPECT_EQ(c.num_sde_steps(), 0);
  EXPECT_EQ(c.states, d.states);

  SamplerConfig mixed = full;
  mixed.sde_lo = 2;
  mixed.sde_hi = 5;
  nn::Rng r5(2);
  auto e = sample_path(model, cond, uncond, mixed, r5);
  for (int k = 0; k < 10; ++k) {
    EXPECT_EQ(e.kinds[k] == StepKind::kSde, k >= 2 && k < 5);
    EXPECT_EQ(e.sde[k].has_value(), k >= 2 && k < 5);
  }
}

TEST(SamplePath, BatchedMatchesSingle) {
  auto model = small_model(5);
  SamplerConfig cfg{6, 0.7, 0, -1, 1.5, 0.0};
  std::vector<std::vector<double>> conds{{1, 0}, {0, 1}, {-1, 2}};
  std::vector<std::vector<double>> unconds(3, std::vector<double>{0, 0});
  std::vector<nn::Rng> rngs{nn::Rng(1), nn::Rng(2), nn::Rng(3)};
  auto batch = sample_paths(model, conds, unconds, cfg, rngs);
  for (std::size_t b = 0; b < 3; ++b) {
    nn::Rng r(b + 1);
    auto single = sample_path(model, conds[b], unconds[b], cfg, r);
    for (std::size_t k = 0; k < single.states.size(); ++k) {
      for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(batch[b].states[k][i], single.states[k][i], 1e-12);
    }
  }
}

TEST(PathLogprobs, ConsistencyAndSensitivity) {
  auto model = small_model(6);
  SamplerConfig cfg{8, 0.7, 0, -1, 1.5, 0.0};
  nn::Rng rng(4);
  auto path = sample_path(model, std::vector<double>{0.2, 0.4}, std::vector<double>{0, 0}, cfg, rng);
  auto lp = path_logprobs(model, path, cfg);
  ASSERT_EQ(lp.size(), 8u);
  for (std::size_t k = 0; k < lp.size(); ++k) EXPECT_NEAR(lp[k], path.sde[k]->log_prob, 1e-9);

  auto moved = model;
  moved.params.at("w0")[0] += 0.05;
  auto lp2 = path_logprobs(moved, path, cfg);
  bool changed = false;
  for (std::size_t k = 0; k < lp.size(); ++k) changed |= lp2[k] != lp[k];
  EXPECT_TRUE(changed);

  SamplerConfig ode = cfg;
  ode.noise_scale = 0.0;
  nn::Rng r2(4);
  auto odepath = sample_path(model, std::vector<double>{0.2, 0.4}, std::vector<double>{0, 0}, ode, r2);
  EXPECT_TRUE(path_logprobs(model, odepath, ode).empty());

  SamplerConfig other = cfg;
  other.num_steps = 9;
  EXPECT_THROW(path_logprobs(model, path, other), std::invalid_argument);
}

TEST(StepMeans, BackwardMatchesFiniteDifferences) {
  auto model = small_model(7);
  SamplerConfig cfg{5, 0.8, 0, -1, 1.5, 0.0};
  std::vector<std::vector<double>> conds{{1, 0}, {0, -1}};
  std::vector<std::vector<double>> unconds(2, std::vector<double>{0, 0});
  std::vector<nn::Rng> rngs{nn::Rng(1), nn::Rng(2)};
  auto paths = sample_paths(model, conds, unconds, cfg, rngs);
  std::vector<const PathRecord*> ptrs{&paths[0], &paths[1]};
  nn::Tensor dmean({2, 3}, {0.3, -0.1, 0.7, 1.1, 0.2, -0.5});
  const int k = 2;
  auto objective = [&] {
    auto tape = step_means(model, ptrs, k, cfg);
    double s = 0.0;
    for (std::size_t i = 0; i < dmean.size(); ++i) s += dmean[i] * tape.mean[i];
    return s;
  };
  auto tape = step_means(model, ptrs, k, cfg);
  EXPECT_NEAR(tape.mean[0], paths[0].sde[k]->mean[0], 1e-12);
  auto grads = model.params.zeros_like();
  backward_means(model, tape, dmean, cfg, grads);
  auto rep = testing::check_gradients(model.params, grads, objective);
  EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst;
}

FmBatch random_batch(nn::Rng& rng, std::size_t B, std::size_t D, std::size_t C) {
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FmBatch b{nn::Tensor({B, D}), nn::Tensor({B, D}), std::vector<double>(B), nn::Tensor({B, C})};
  for (double& v : b.x0.values()) v = n(rng);
  for (double& v : b.x1.values()) v = n(rng);
  for (double& v : b.cond.values()) v = n(rng);
  for (double& t : b.t) t = u(rng);
  return b;
}

TEST(FmLoss, ExactAndZeroPredictors) {
  // Zero weights: the network outputs its last bias.
  auto model = small_model(1);
  for (auto& [name, t] : model.params) std::fill(t.values().begin(), t.values().end(), 0.0);
  FmBatch b{nn::Tensor({1, 3}, {0.5, 1.0, -1.0}), nn::Tensor({1, 3}, {1.5, -1.0, 2.0}), {0.4},
            nn::Tensor({1, 2}, {0.1, 0.2})};
  EXPECT_EQ(fm_loss(model, b).loss, 1.0 + 4.0 + 9.0);

  const std::string last = "b" + std::to_string(model.spec.num_layers() - 1);
  model.params.at(last)[0] = 1.0;
  model.params.at(last)[1] = -2.0;
  model.params.at(last)[2] = 3.0;
  EXPECT_EQ(fm_loss(model, b).loss, 0.0);
}

TEST(FmLoss, MatchesStraightLineFormula) {
  auto model = small_model(9);
  nn::Rng rng(31);
  auto batch = random_batch(rng, 6, 3, 2);
  double expect = 0.0;
  for (std::size_t r = 0; r < 6; ++r) {
    const double t = batch.t[r];
    std::vector<double> in;
    for (std::size_t i = 0; i < 3; ++i) in.push_back((1.0 - t) * batch.x0.at(r, i) + t * batch.x1.at(r, i));
    in.push_back(t);
    for (std::size_t i = 0; i < 2; ++i) in.push_back(batch.cond.at(r, i));
    auto v = nn::forward(model.spec, model.params, nn::Tensor::vector(in)).output;
    for (std::size_t i = 0; i < 3; ++i) {
      const double d = batch.x1.at(r, i) - batch.x0.at(r, i) - v[i];
      expect += d * d;
    }
  }
  EXPECT_NEAR(fm_loss(model, batch).loss, expect / 6.0, 1e-12);
}

TEST(FmLoss, FiniteDifferences) {
  auto model = small_model(12);
  nn::Rng rng(2);
  auto batch = random_batch(rng, 5, 3, 2);
  auto res = fm_loss(model, batch);
  auto rep = testing::check_gradients(model.params, res.grads, [&] { return fm_loss(model, batch).loss; });
  EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst;
}

TEST(FmLoss, Errors) {
  auto model = small_model(1);
  FmBatch empty{nn::Tensor({0, 3}), nn::Tensor({0, 3}), {}, nn::Tensor({0, 2})};
  EXPECT_THROW(fm_loss(model, empty), std::invalid_argument);
  nn::Rng rng(1);
  auto batch = random_batch(rng, 2, 3, 2);
  batch.x0[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(fm_loss(model, batch), std::domain_error);
}

}  // namespace
}  // namespace r3::flow
