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

#include "r3/rewards.hpp"

#include <stdexcept>
#include <string>

#include "r3/scenes.hpp"

namespace r3::rewards {
namespace {

void check_unit(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw std::invalid_argument(std::string(what) + " = " + std::to_string(v) + " is outside [0, 1]");
  }
}

void check_format_flag(int r_format) {
  if (r_format != 0 && r_format != 1) throw std::invalid_argument("r_format must be 0 or 1");
}

}  // namespace

ReasonRewards reason_rewards(double v, int r_format) {
  check_unit(v, "V");
  check_format_flag(r_format);
  return {v, v + r_format};
}

double correctness(double v_hat, std::optional<double> v_new, const EditInstruction& edit) {
  check_unit(v_hat, "V_hat");
  if (scenes::is_perfect(v_hat)) return is_no_edit(edit) ? 1.0 : 0.0;
  if (!is_real_edit(edit)) return 0.0;
  if (!v_new) throw std::invalid_argument("correctness: refined score missing for a real edit");
  check_unit(*v_new, "V");
  return *v_new - v_hat;
}

ReflectRefineRewards reflect_refine_rewards(double c, int r_format) {
  check_format_flag(r_format);
  return {c + r_format, c};
}

RewardBreakdown reason_breakdown(double v, int r_format) {
  const auto r = reason_rewards(v, r_format);
  RewardBreakdown b;
  b.stage = StageKind::kReason;
  b.v = v;
  b.r_format = r_format;
  b.r_diffusion = r.diffusion;
  b.r_text = r.text;
  return b;
}

RewardBreakdown reflect_refine_breakdown(double v_hat, std::optional<double> v_new,
                                         const EditInstruction& edit, int r_format) {
  RewardBreakdown b;
  b.stage = StageKind::kReflectRefine;
  b.v_hat = v_hat;
  b.v = is_real_edit(edit) && v_new ? *v_new : v_hat;
  b.r_format = r_format;
  b.correctness = correctness(v_hat, v_new, edit);
  const auto r = reflect_refine_rewards(*b.correctness, r_format);
  b.r_reflection = r.reflection;
  b.r_refinement = r.refinement;
  return b;
}

}  // namespace r3::rewards
