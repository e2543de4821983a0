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

#include <benchmark/benchmark.h>

#include <random>

#include "r3/nncore.hpp"
#include "r3/scenes.hpp"
#include "r3/textpolicy.hpp"

namespace {

using namespace r3;

void BM_MlpForwardBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  nn::MlpSpec spec{{110, 256, 256, 66}, nn::Activation::kSilu};
  nn::Rng rng(1);
  auto params = nn::init_params(spec, rng);
  nn::Tensor x({batch, 110}, 0.3);
  nn::Tensor up({batch, 66}, 1.0);
  for (auto _ : state) {
    auto out = nn::forward(spec, params, x);
    auto g = nn::backward(spec, params, out.cache, up);
    benchmark::DoNotOptimize(g.params.squared_norm());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(batch));
}
BENCHMARK(BM_MlpForwardBackward)->Arg(1)->Arg(64)->Arg(256);

void BM_TextSample(benchmark::State& state) {
  nn::Rng rng(2);
  auto policy = text::make_policy({}, rng);
  auto p = scenes::sample_prompt(rng, scenes::Split::kTrain);
  auto cond = text::condition_input(scenes::featurize(p), nullptr);
  for (auto _ : state) benchmark::DoNotOptimize(text::sample_sequence(policy, cond, 0.9, rng).tokens.size());
}
BENCHMARK(BM_TextSample);

void BM_Verify(benchmark::State& state) {
  nn::Rng rng(3);
  std::vector<scenes::PromptSpec> prompts;
  std::vector<scenes::SceneLatent> latents;
  std::normal_distribution<double> n;
  for (int i = 0; i < 256; ++i) {
    prompts.push_back(scenes::sample_prompt(rng, scenes::Split::kAny));
    scenes::SceneLatent l;
    for (double& v : l.values) v = n(rng);
    latents.push_back(l);
  }
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(scenes::verify(latents[i % 256], prompts[i % 256]));
    ++i;
  }
}
BENCHMARK(BM_Verify);

}  // namespace
