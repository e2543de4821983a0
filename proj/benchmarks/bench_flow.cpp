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

#include "r3/flowgen.hpp"
#include "r3/scenes.hpp"
#include "r3/treerl.hpp"

namespace {

using namespace r3;

flow::FlowModel generator() {
  nn::Rng rng(1);
  return flow::make_flow_model(scenes::kLatentDim, train::kGeneratorCondDim, {256, 256}, rng);
}

void BM_SamplePaths(benchmark::State& state) {
  const auto B = static_cast<std::size_t>(state.range(0));
  const bool sde = state.range(1) != 0;
  auto model = generator();
  flow::SamplerConfig cfg{10, sde ? 0.7 : 0.0, 0, -1, 1.5, 0.0};
  std::vector<std::vector<double>> conds(B, std::vector<double>(train::kGeneratorCondDim, 0.1));
  std::vector<std::vector<double>> unconds(B, train::generator_null_condition());
  for (auto _ : state) {
    std::vector<nn::Rng> rngs;
    for (std::size_t b = 0; b < B; ++b) rngs.emplace_back(b);
    benchmark::DoNotOptimize(flow::sample_paths(model, conds, unconds, cfg, rngs).size());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(B));
}
BENCHMARK(BM_SamplePaths)->Args({1, 0})->Args({16, 1})->Args({128, 1});

void BM_FmLoss(benchmark::State& state) {
  const auto B = static_cast<std::size_t>(state.range(0));
  auto model = generator();
  flow::FmBatch batch{nn::Tensor({B, static_cast<std::size_t>(scenes::kLatentDim)}, 0.2),
                      nn::Tensor({B, static_cast<std::size_t>(scenes::kLatentDim)}, -0.1),
                      std::vector<double>(B, 0.4),
                      nn::Tensor({B, static_cast<std::size_t>(train::kGeneratorCondDim)}, 0.05)};
  for (auto _ : state) benchmark::DoNotOptimize(flow::fm_loss(model, batch).loss);
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(B));
}
BENCHMARK(BM_FmLoss)->Arg(64);

void BM_PathLogprobs(benchmark::State& state) {
  auto model = generator();
  flow::SamplerConfig cfg{10, 0.7, 0, -1, 1.5, 0.0};
  nn::Rng rng(4);
  auto path = flow::sample_path(model, std::vector<double>(train::kGeneratorCondDim, 0.1),
                                train::generator_null_condition(), cfg, rng);
  for (auto _ : state) benchmark::DoNotOptimize(flow::path_logprobs(model, path, cfg).size());
}
BENCHMARK(BM_PathLogprobs);

}  // namespace
