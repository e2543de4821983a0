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

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

namespace r3 {

enum class Color { kRed = 0, kGreen, kBlue, kYellow };
enum class Shape { kCircle = 0, kSquare, kTriangle };
enum class Direction { kLeft = 0, kRight, kAbove, kBelow };
enum class SizeChange { kBigger = 0, kSmaller };

inline constexpr int kNumColors = 4;
inline constexpr int kNumShapes = 3;
inline constexpr int kNumDirections = 4;
inline constexpr int kMaxCount = 4;

std::string_view name_of(Color c);
std::string_view name_of(Shape s);
std::string_view name_of(Direction d);
std::string_view name_of(SizeChange s);

std::optional<Color> parse_color(std::string_view text);
std::optional<Shape> parse_shape(std::string_view text);
std::optional<Direction> parse_direction(std::string_view text);
std::optional<SizeChange> parse_size_change(std::string_view text);

namespace edit {

struct Add {
  int count;
  Color color;
  Shape shape;
  friend bool operator==(const Add&, const Add&) = default;
};
struct Remove {
  int count;
  Color color;
  Shape shape;
  friend bool operator==(const Remove&, const Remove&) = default;
};
struct Recolor {
  Color color;
  Shape shape;
  Color new_color;
  friend bool operator==(const Recolor&, const Recolor&) = default;
};
struct Move {
  Color color;
  Shape shape;
  Direction direction;
  friend bool operator==(const Move&, const Move&) = default;
};
struct Resize {
  Color color;
  Shape shape;
  SizeChange size;
  friend bool operator==(const Resize&, const Resize&) = default;
};
struct NoEdit {
  friend bool operator==(const NoEdit&, const NoEdit&) = default;
};
/// Parse failure; `token_index` is the position of the offending token.
struct Invalid {
  std::size_t token_index;
  friend bool operator==(const Invalid&, const Invalid&) = default;
};

}  // namespace edit

using EditInstruction =
    std::variant<edit::Add, edit::Remove, edit::Recolor, edit::Move, edit::Resize, edit::NoEdit,
                 edit::Invalid>;

inline bool is_no_edit(const EditInstruction& e) { return std::holds_alternative<edit::NoEdit>(e); }
inline bool is_invalid(const EditInstruction& e) { return std::holds_alternative<edit::Invalid>(e); }
/// True for the five structured edit variants.
inline bool is_real_edit(const EditInstruction& e) { return !is_no_edit(e) && !is_invalid(e); }

std::string to_string(const EditInstruction& e);

}  // namespace r3
