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

#include "r3/pipeline.hpp"
#include "r3/treerl.hpp"

namespace {

using namespace r3;

train::TrainConfig bench_config(train::Mode mode) {
  train::TrainConfig tc;
  tc.prompt_batch = 4;
  tc.group_size = 8;
  tc.rl.group_size = 8;
  tc.select_count = 8;
  tc.mode = mode;
  return tc;
}

void BM_TrainIteration(benchmark::State& state) {
  const auto mode = state.range(0) == 0 ? train::Mode::kTree : train::Mode::kFullTrajectory;
  const auto models = train::make_models({}, 1);
  const auto cfg = bench_config(mode);
  auto s = train::make_train_state(models, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(train::train_iteration(s, cfg).size());
}
BENCHMARK(BM_TrainIteration)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_InferR3(benchmark::State& state) {
  const auto models = train::make_models({}, 1);
  pipeline::ModelAgent agent(models);
  const auto prompts = pipeline::held_out_prompts(16, 0);
  std::size_t i = 0;
  for (auto _ : state) {
    nn::Rng rng(i);
    benchmark::DoNotOptimize(pipeline::infer_r3(agent, prompts[i++ % prompts.size()], 2, rng).turn_count());
  }
}
BENCHMARK(BM_InferR3)->Unit(benchmark::kMicrosecond);

}  // namespace
