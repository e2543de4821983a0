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

// Stage-wise rewards. Reason stage: r_diffusion = V, r_text = V + r_format.
// Reflect-Refine stage: correctness C (score gain for imperfect inputs, or an
// indicator of correct termination for perfect ones), then
// r_reflection = C + r_format and r_refinement = C.

#include <optional>

#include "r3/edit.hpp"

namespace r3::rewards {

enum class StageKind { kReason, kReflectRefine };

struct RewardBreakdown {
  StageKind stage = StageKind::kReason;
  double v = 0.0;  // score of the image this stage produced (or kept)
  std::optional<double> v_hat;
  int r_format = 0;
  std::optional<double> correctness;
  std::optional<double> r_diffusion;
  std::optional<double> r_text;
  std::optional<double> r_reflection;
  std::optional<double> r_refinement;
};

struct ReasonRewards {
  double diffusion;
  double text;
};

/// Throws std::invalid_argument when V is outside [0, 1] or r_format is not 0/1.
ReasonRewards reason_rewards(double v, int r_format);

/// V_hat < 1: V_new - V_hat, with V_new := V_hat for NoEdit/Invalid.
/// V_hat = 1: 1 iff the edit is NoEdit.
/// Throws std::invalid_argument if V_hat is out of range, or V_new is missing
/// while V_hat < 1 and the edit is a real edit.
double correctness(double v_hat, std::optional<double> v_new, const EditInstruction& edit);

struct ReflectRefineRewards {
  double reflection;
  double refinement;
};

ReflectRefineRewards reflect_refine_rewards(double c, int r_format);

RewardBreakdown reason_breakdown(double v, int r_format);
RewardBreakdown reflect_refine_breakdown(double v_hat, std::optional<double> v_new,
                                         const EditInstruction& edit, int r_format);

}  // namespace r3::rewards
