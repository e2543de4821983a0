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

// Synthetic compositional-scene environment: prompt templates, the slot
// latent codec, the alignment verifier, condition featurizers and the
// ground-truth edit oracle.
//
// Slot layout (11 values per slot, 6 slots):
//   [presence, x, y, size, red, green, blue, yellow, circle, square, triangle]
// A slot holds an object iff its presence logit is > 0. Colour and shape are
// read by argmax with ties going to the lowest index.

#include <array>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "r3/edit.hpp"

namespace r3::scenes {

using Rng = std::mt19937_64;

inline constexpr int kSlots = 6;
inline constexpr int kSlotWidth = 11;
inline constexpr int kLatentDim = kSlots * kSlotWidth;
inline constexpr int kFeatureDim = 32;
inline constexpr double kPositionMargin = 0.1;
inline constexpr double kPerfectTolerance = 1e-9;

enum class Category { kColor = 0, kCount, kColorCount, kColorPos, kPosCount, kPosSize, kMultiCount };
inline constexpr int kNumCategories = 7;
inline constexpr std::array<Category, kNumCategories> kAllCategories = {
    Category::kColor,   Category::kCount,   Category::kColorCount, Category::kColorPos,
    Category::kPosCount, Category::kPosSize, Category::kMultiCount};

std::string_view name_of(Category c);
std::optional<Category> parse_category(std::string_view text);

struct ObjectGroup {
  int count = 1;
  Color color = Color::kRed;
  Shape shape = Shape::kCircle;
  friend bool operator==(const ObjectGroup&, const ObjectGroup&) = default;
};

enum class RelationKind { kNone, kPosition, kSize };

struct Relation {
  RelationKind kind = RelationKind::kNone;
  Direction direction = Direction::kLeft;  // kPosition only
  SizeChange size = SizeChange::kBigger;   // kSize only
  friend bool operator==(const Relation&, const Relation&) = default;
};

/// Structured stand-in for a text prompt. A relation reads "group0 <rel> group1".
struct PromptSpec {
  std::vector<ObjectGroup> groups;
  Relation relation;
  Category category = Category::kColor;

  /// Throws std::invalid_argument when the fields are inconsistent.
  void validate() const;
  friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

/// Line form, e.g. "count:3,color:red,shape:circle" or
/// "count:1,color:red,shape:circle;count:2,color:blue,shape:square;relation:left;category:color_pos".
/// Category is optional on input and inferred from the structure when absent.
std::string to_line(const PromptSpec& prompt);
PromptSpec parse_prompt_line(std::string_view line);
Category infer_category(const PromptSpec& prompt);

PromptSpec generate_prompt(Rng& rng, Category category);

enum class Split { kTrain, kHeldOut, kAny };
/// Deterministic ~10% hold-out of template combinations, keyed on to_line.
bool is_held_out(const PromptSpec& prompt);
/// generate_prompt restricted to one side of the split; category drawn uniformly
/// when absent.
PromptSpec sample_prompt(Rng& rng, Split split, std::optional<Category> category = std::nullopt);
/// Every template prompt, in a fixed order.
std::vector<PromptSpec> all_template_prompts();

struct SceneLatent {
  std::vector<double> values = std::vector<double>(kLatentDim, 0.0);
  friend bool operator==(const SceneLatent&, const SceneLatent&) = default;
};

struct SceneObject {
  Color color = Color::kRed;
  Shape shape = Shape::kCircle;
  double x = 0.0;
  double y = 0.0;
  double size = 0.0;
  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct DecodedScene {
  std::vector<SceneObject> objects;  // slot order
  friend bool operator==(const DecodedScene&, const DecodedScene&) = default;
};

/// (shape, colour, x, y, size) ordering used for slot assignment.
bool canonical_less(const SceneObject& a, const SceneObject& b);
std::vector<SceneObject> canonical_order(std::vector<SceneObject> objects);

DecodedScene decode_scene(const SceneLatent& latent);
/// Throws std::invalid_argument for more than kSlots objects.
SceneLatent encode_scene(const std::vector<SceneObject>& objects);

/// Alignment score in [0, 1].
double verify(const SceneLatent& latent, const PromptSpec& prompt);
double verify(const DecodedScene& scene, const PromptSpec& prompt);
inline bool is_perfect(double v) { return v >= 1.0 - kPerfectTolerance; }

std::array<double, kFeatureDim> featurize(const PromptSpec& prompt);
std::array<double, kFeatureDim> featurize(const EditInstruction& edit);

DecodedScene apply_edit_oracle(const DecodedScene& scene, const EditInstruction& edit);
/// Slot-preserving counterpart of apply_edit_oracle used as the editor's
/// regression target: untouched slots keep their index, present slots are
/// snapped to clean logits. decode of the result equals apply_edit_oracle of
/// decode(source) as a multiset.
SceneLatent edit_latent_target(const SceneLatent& source, const EditInstruction& edit);

/// Deterministic layout satisfying the prompt (verify == 1).
std::vector<SceneObject> oracle_scene(const PromptSpec& prompt);
/// oracle_scene with small positional and size jitter that keeps verify == 1.
std::vector<SceneObject> oracle_scene(const PromptSpec& prompt, Rng& rng);

/// The single edit the oracle would issue next: NoEdit for perfect scenes,
/// otherwise a fix for the first unmet constraint.
EditInstruction corrective_edit(const DecodedScene& scene, const PromptSpec& prompt);

/// A random structured edit that lowers the score of a perfect scene below 1.
/// Returns NoEdit when none of `attempts` candidates breaks the scene.
EditInstruction random_breaking_edit(Rng& rng, const DecodedScene& scene, const PromptSpec& prompt,
                                     int attempts = 32);
/// Uniformly random structured edit (any verb, any attributes).
EditInstruction random_edit(Rng& rng);

}  // namespace r3::scenes
