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

// Shared helpers for the unit tests: central finite differences and small
// statistics oracles.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "r3/nncore.hpp"

namespace r3::testing {

struct FdReport {
  double max_rel_error = 0.0;
  std::string worst;
  int checked = 0;
};

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Compares `analytic` against central differences of `f` over every entry of
// `params` (or every `stride`-th entry). `f` must read `params` live.
inline FdReport check_gradients(nn::ParamSet& params, const nn::ParamSet& analytic,
                                const std::function<double()>& f, double h = 1e-5, int stride = 1) {
  FdReport rep;
  for (auto& [name, tensor] : params) {
    const auto& g = analytic.at(name);
    for (std::size_t i = 0; i < tensor.size(); i += static_cast<std::size_t>(stride)) {
      const double keep = tensor[i];
      tensor[i] = keep + h;
      const double up = f();
      tensor[i] = keep - h;
      const double down = f();
      tensor[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double err = rel_error(g[i], numeric);
      ++rep.checked;
      if (err > rep.max_rel_error) {
        rep.max_rel_error = err;
        rep.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(g[i]) + " numeric " +
                    std::to_string(numeric);
      }
    }
  }
  return rep;
}

// Standard error of a Bernoulli frequency estimate.
inline double binomial_se(double p, int n) { return std::sqrt(p * (1.0 - p) / n); }

}  // namespace r3::testing
