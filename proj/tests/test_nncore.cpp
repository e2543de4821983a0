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

#include "r3/nncore.hpp"
#include "support.hpp"

namespace r3::nn {
namespace {

// Straight-line re-evaluation of an MLP, one dot product at a time.
std::vector<double> reference_forward(const MlpSpec& spec, const ParamSet& p, std::vector<double> x) {
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto& w = p.at("w" + std::to_string(l));
    const auto& b = p.at("b" + std::to_string(l));
    const std::size_t out = w.shape()[0], in = w.shape()[1];
    std::vector<double> y(out);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += w[o * in + i] * x[i];
      if (l + 1 < spec.num_layers()) {
        acc = spec.activation == Activation::kTanh ? std::tanh(acc) : acc / (1.0 + std::exp(-acc));
      }
      y[o] = acc;
    }
    x = std::move(y);
  }
  return x;
}

TEST(InitParams, BiasesZeroAndShapes) {
  Rng rng(3);
  MlpSpec spec{{4, 8, 3}};
  auto p = init_params(spec, rng);
  EXPECT_EQ(p.at("w0").shape(), (std::vector<std::size_t>{8, 4}));
  EXPECT_EQ(p.at("w1").shape(), (std::vector<std::size_t>{3, 8}));
  EXPECT_EQ(p.at("b0").shape(), (std::vector<std::size_t>{8}));
  EXPECT_EQ(p.at("b1").shape(), (std::vector<std::size_t>{3}));
  for (double v : p.at("b0").values()) EXPECT_EQ(v, 0.0);
  for (double v : p.at("b1").values()) EXPECT_EQ(v, 0.0);

  MlpSpec small{{2, 2}};
  auto q = init_params(small, rng);
  for (double v : q.at("b0").values()) EXPECT_EQ(v, 0.0);
}

TEST(InitParams, GlorotRange) {
  Rng rng(11);
  MlpSpec spec{{20, 30, 5}};
  auto p = init_params(spec, rng);
  const double s0 = std::sqrt(6.0 / 50.0), s1 = std::sqrt(6.0 / 35.0);
  for (double v : p.at("w0").values()) EXPECT_LE(std::abs(v), s0);
  for (double v : p.at("w1").values()) EXPECT_LE(std::abs(v), s1);
}

TEST(InitParams, SameSeedSameBits) {
  MlpSpec spec{{5, 7, 2}};
  Rng a(42), b(42);
  EXPECT_EQ(init_params(spec, a), init_params(spec, b));
}

TEST(MlpSpec, Validation) {
  EXPECT_THROW((MlpSpec{{3}}).validate(), std::invalid_argument);
  EXPECT_THROW((MlpSpec{{3, 0, 1}}).validate(), std::invalid_argument);
  EXPECT_NO_THROW((MlpSpec{{3, 1}}).validate());
}

TEST(Forward, IdentityLinear) {
  MlpSpec spec{{2, 2}};
  ParamSet p;
  p.add("w0", Tensor({2, 2}, {1, 0, 0, 1}));
  p.add("b0", Tensor({2}));
  auto out = forward(spec, p, Tensor::vector({1, 2}));
  EXPECT_EQ(out.output[0], 1.0);
  EXPECT_EQ(out.output[1], 2.0);
}

TEST(Forward, ZeroWeightsGiveBias) {
  MlpSpec spec{{3, 2}};
  ParamSet p;
  p.add("w0", Tensor({2, 3}));
  p.add("b0", Tensor({2}, {0.5, -1.5}));
  auto out = forward(spec, p, Tensor::vector({7, -3, 2}));
  EXPECT_EQ(out.output[0], 0.5);
  EXPECT_EQ(out.output[1], -1.5);
}

TEST(Forward, MatchesStraightLineOracle) {
  for (auto act : {Activation::kTanh, Activation::kSilu}) {
    Rng rng(7);
    MlpSpec spec{{5, 9, 6, 3}, act};
    auto p = init_params(spec, rng);
    std::normal_distribution<double> n;
    Tensor x({4, 5});
    for (double& v : x.values()) v = n(rng);
    auto out = forward(spec, p, x);
    ASSERT_EQ(out.output.shape(), (std::vector<std::size_t>{4, 3}));
    for (std::size_t r = 0; r < 4; ++r) {
      auto row = x.row(r);
      auto ref = reference_forward(spec, p, {row.begin(), row.end()});
      for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out.output.at(r, c), ref[c], 1e-12);
    }
  }
}

TEST(Forward, PureAndDimensionChecked) {
  Rng rng(1);
  MlpSpec spec{{3, 4, 2}};
  auto p = init_params(spec, rng);
  auto x = Tensor::vector({0.1, -0.2, 0.3});
  EXPECT_EQ(forward(spec, p, x).output.data(), forward(spec, p, x).output.data());
  EXPECT_THROW(forward(spec, p, Tensor::vector({1, 2})), std::invalid_argument);
}

TEST(Backward, ZeroUpstreamZeroGradients) {
  Rng rng(2);
  MlpSpec spec{{3, 4, 2}};
  auto p = init_params(spec, rng);
  auto fw = forward(spec, p, Tensor::vector({1, 2, 3}));
  auto g = backward(spec, p, fw.cache, Tensor({2}));
  EXPECT_EQ(g.params.squared_norm(), 0.0);
  for (double v : g.input.values()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, ScalarProductRule) {
  MlpSpec spec{{1, 1}};
  ParamSet p;
  p.add("w0", Tensor({1, 1}, {2.5}));
  p.add("b0", Tensor({1}));
  auto fw = forward(spec, p, Tensor::vector({3.0}));
  auto g = backward(spec, p, fw.cache, Tensor::vector({1.0}));
  EXPECT_EQ(g.params.at("w0")[0], 3.0);
  EXPECT_EQ(g.input[0], 2.5);
}

TEST(Backward, FiniteDifferences) {
  for (auto act : {Activation::kTanh, Activation::kSilu}) {
    Rng rng(5);
    MlpSpec spec{{4, 12, 10, 3}, act};
    auto p = init_params(spec, rng);
    ASSERT_LE(p.parameter_count(), 1000u);
    std::normal_distribution<double> n;
    Tensor x({3, 4}), up({3, 3});
    for (double& v : x.values()) v = n(rng);
    for (double& v : up.values()) v = n(rng);
    auto objective = [&] {
      auto y = forward(spec, p, x).output;
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * up[i];
      return s;
    };
    auto fw = forward(spec, p, x);
    auto g = backward(spec, p, fw.cache, up);
    auto rep = testing::check_gradients(p, g.params, objective);
    EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst;

    // input gradient
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double keep = x[i];
      x[i] = keep + 1e-5;
      const double a = objective();
      x[i] = keep - 1e-5;
      const double b = objective();
      x[i] = keep;
      EXPECT_LT(testing::rel_error(g.input[i], (a - b) / 2e-5), 1e-4);
    }
  }
}

TEST(Adam, ZeroGradsAreFixedPoint) {
  Rng rng(4);
  MlpSpec spec{{3, 3}};
  auto p = init_params(spec, rng);
  const auto before = p;
  auto st = make_adam(p);
  adam_step(p, p.zeros_like(), st);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step_count, 1u);
  EXPECT_EQ(st.first_moment.squared_norm(), 0.0);
  EXPECT_EQ(st.second_moment.squared_norm(), 0.0);
}

TEST(Adam, FirstStepMagnitudeIsLr) {
  Rng rng(4);
  MlpSpec spec{{3, 2}};
  auto p = init_params(spec, rng);
  const auto before = p;
  auto g = p.zeros_like();
  for (auto& [name, t] : g) std::fill(t.values().begin(), t.values().end(), 1.0);
  auto st = make_adam(p, 0.1);
  adam_step(p, g, st);
  for (const auto& [name, t] : p) {
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(before.at(name)[i] - t[i], 0.1, 1e-6);
  }
}

TEST(Adam, DeterministicAndRejectsNonFinite) {
  Rng r1(9), r2(9);
  MlpSpec spec{{2, 3, 1}};
  auto a = init_params(spec, r1), b = init_params(spec, r2);
  auto sa = make_adam(a), sb = make_adam(b);
  auto g = a.zeros_like();
  for (int k = 0; k < 5; ++k) {
    for (auto& [name, t] : g) for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::sin(k + i + 0.5);
    adam_step(a, g, sa);
    adam_step(b, g, sb);
  }
  EXPECT_EQ(a, b);
  EXPECT_EQ(sa.step_count, 5u);

  g.at("w1")[0] = std::nan("");
  try {
    adam_step(a, g, sa);
    FAIL() << "expected throw";
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("w1"), std::string::npos);
  }
}

TEST(ParamSet, InsertionOrderAndPrefixes) {
  ParamSet p;
  p.add("z", Tensor({1}));
  p.add("a", Tensor({2}));
  std::vector<std::string> names;
  for (const auto& [n, t] : p) names.push_back(n);
  EXPECT_EQ(names, (std::vector<std::string>{"z", "a"}));
  EXPECT_THROW(p.add("a", Tensor({1})), std::invalid_argument);

  ParamSet all;
  all.merge(p, "m.");
  EXPECT_TRUE(all.contains("m.z"));
  EXPECT_EQ(all.extract("m."), p);
}

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  Tensor t({2, 3}, 1.0);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_TRUE(t.all_finite());
}

}  // namespace
}  // namespace r3::nn
