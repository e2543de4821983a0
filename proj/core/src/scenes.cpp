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

#include "r3/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace r3 {

namespace {
constexpr std::array<std::string_view, kNumColors> kColorNames = {"red", "green", "blue", "yellow"};
constexpr std::array<std::string_view, kNumShapes> kShapeNames = {"circle", "square", "triangle"};
constexpr std::array<std::string_view, kNumDirections> kDirectionNames = {"left", "right", "above",
                                                                          "below"};
constexpr std::array<std::string_view, 2> kSizeNames = {"bigger", "smaller"};

template <typename E, std::size_t N>
std::optional<E> lookup(const std::array<std::string_view, N>& names, std::string_view text) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == text) return static_cast<E>(i);
  }
  return std::nullopt;
}
}  // namespace

std::string_view name_of(Color c) { return kColorNames[static_cast<int>(c)]; }
std::string_view name_of(Shape s) { return kShapeNames[static_cast<int>(s)]; }
std::string_view name_of(Direction d) { return kDirectionNames[static_cast<int>(d)]; }
std::string_view name_of(SizeChange s) { return kSizeNames[static_cast<int>(s)]; }

std::optional<Color> parse_color(std::string_view t) { return lookup<Color>(kColorNames, t); }
std::optional<Shape> parse_shape(std::string_view t) { return lookup<Shape>(kShapeNames, t); }
std::optional<Direction> parse_direction(std::string_view t) {
  return lookup<Direction>(kDirectionNames, t);
}
std::optional<SizeChange> parse_size_change(std::string_view t) {
  return lookup<SizeChange>(kSizeNames, t);
}

std::string to_string(const EditInstruction& e) {
  std::ostringstream out;
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, edit::Add>) {
          out << "add " << v.count << ' ' << name_of(v.color) << ' ' << name_of(v.shape);
        } else if constexpr (std::is_same_v<T, edit::Remove>) {
          out << "remove " << v.count << ' ' << name_of(v.color) << ' ' << name_of(v.shape);
        } else if constexpr (std::is_same_v<T, edit::Recolor>) {
          out << "recolor " << name_of(v.color) << ' ' << name_of(v.shape) << ' '
              << name_of(v.new_color);
        } else if constexpr (std::is_same_v<T, edit::Move>) {
          out << "move " << name_of(v.color) << ' ' << name_of(v.shape) << ' '
              << name_of(v.direction);
        } else if constexpr (std::is_same_v<T, edit::Resize>) {
          out << "resize " << name_of(v.color) << ' ' << name_of(v.shape) << ' ' << name_of(v.size);
        } else if constexpr (std::is_same_v<T, edit::NoEdit>) {
          out << "noedit";
        } else {
          out << "invalid@" << v.token_index;
        }
      },
      e);
  return out.str();
}

namespace scenes {
namespace {

constexpr std::array<std::string_view, kNumCategories> kCategoryNames = {
    "color", "count", "color_count", "color_pos", "pos_count", "pos_size", "multi_count"};

constexpr int kPresence = 0;
constexpr int kX = 1;
constexpr int kY = 2;
constexpr int kSize = 3;
constexpr int kColorBase = 4;
constexpr int kShapeBase = 8;
constexpr double kOn = 2.0;
constexpr double kOff = -2.0;

double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

bool matches(const SceneObject& o, Color c, Shape s) { return o.color == c && o.shape == s; }

int count_matching(const std::vector<SceneObject>& objects, Color c, Shape s) {
  return static_cast<int>(
      std::count_if(objects.begin(), objects.end(), [&](const auto& o) { return matches(o, c, s); }));
}

struct GroupStats {
  int found = 0;
  double mean_x = 0.0;
  double mean_y = 0.0;
  double mean_size = 0.0;
};

GroupStats group_stats(const std::vector<SceneObject>& objects, const ObjectGroup& g) {
  GroupStats st;
  for (const auto& o : objects) {
    if (!matches(o, g.color, g.shape)) continue;
    ++st.found;
    st.mean_x += o.x;
    st.mean_y += o.y;
    st.mean_size += o.size;
  }
  if (st.found > 0) {
    st.mean_x /= st.found;
    st.mean_y /= st.found;
    st.mean_size /= st.found;
  }
  return st;
}

bool relation_holds(const Relation& rel, const GroupStats& a, const GroupStats& b) {
  if (a.found == 0 || b.found == 0) return false;
  if (rel.kind == RelationKind::kPosition) {
    switch (rel.direction) {
      case Direction::kLeft: return a.mean_x < b.mean_x - kPositionMargin;
      case Direction::kRight: return a.mean_x > b.mean_x + kPositionMargin;
      case Direction::kAbove: return a.mean_y > b.mean_y + kPositionMargin;
      case Direction::kBelow: return a.mean_y < b.mean_y - kPositionMargin;
    }
  }
  if (rel.size == SizeChange::kBigger) return a.mean_size > b.mean_size + kPositionMargin;
  return a.mean_size < b.mean_size - kPositionMargin;
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

template <typename T>
T pick(Rng& rng, int n) {
  return static_cast<T>(std::uniform_int_distribution<int>(0, n - 1)(rng));
}

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

std::pair<ObjectGroup, ObjectGroup> distinct_pair(Rng& rng, bool same_shape, bool different_shape) {
  while (true) {
    ObjectGroup a{1, pick<Color>(rng, kNumColors), pick<Shape>(rng, kNumShapes)};
    ObjectGroup b{1, pick<Color>(rng, kNumColors), pick<Shape>(rng, kNumShapes)};
    if (same_shape) b.shape = a.shape;
    if (a.color == b.color && a.shape == b.shape) continue;
    if (different_shape && a.shape == b.shape) continue;
    return {a, b};
  }
}

Direction opposite(Direction d) {
  switch (d) {
    case Direction::kLeft: return Direction::kRight;
    case Direction::kRight: return Direction::kLeft;
    case Direction::kAbove: return Direction::kBelow;
    case Direction::kBelow: return Direction::kAbove;
  }
  return d;
}

void shift(SceneObject& o, Direction d, double amount) {
  switch (d) {
    case Direction::kLeft: o.x = clamp_unit(o.x - amount); break;
    case Direction::kRight: o.x = clamp_unit(o.x + amount); break;
    case Direction::kAbove: o.y = clamp_unit(o.y + amount); break;
    case Direction::kBelow: o.y = clamp_unit(o.y - amount); break;
  }
}

// Positions for `k` new (c, s) objects: continue the row to the right of the
// right-most existing match, or start at the first free candidate cell.
std::vector<std::pair<double, double>> add_positions(const std::vector<SceneObject>& objects,
                                                     Color c, Shape s, int k) {
  static constexpr std::array<std::pair<double, double>, 9> kCandidates = {{{-0.6, 0.6},
                                                                            {0.6, 0.6},
                                                                            {-0.6, -0.6},
                                                                            {0.6, -0.6},
                                                                            {0.0, 0.6},
                                                                            {0.0, -0.6},
                                                                            {-0.6, 0.0},
                                                                            {0.6, 0.0},
                                                                            {0.0, 0.0}}};
  std::vector<std::pair<double, double>> out;
  const SceneObject* anchor = nullptr;
  for (const auto& o : objects) {
    if (!matches(o, c, s)) continue;
    if (anchor == nullptr || o.x > anchor->x || (o.x == anchor->x && o.y > anchor->y)) anchor = &o;
  }
  if (anchor != nullptr) {
    for (int j = 0; j < k; ++j) out.emplace_back(clamp_unit(anchor->x + 0.2 * (j + 1)), anchor->y);
    return out;
  }
  std::pair<double, double> start = kCandidates.front();
  for (const auto& cand : kCandidates) {
    const bool free = std::all_of(objects.begin(), objects.end(), [&](const SceneObject& o) {
      return std::hypot(o.x - cand.first, o.y - cand.second) >= 0.25;
    });
    if (free) {
      start = cand;
      break;
    }
  }
  for (int j = 0; j < k; ++j) out.emplace_back(clamp_unit(start.first + 0.2 * j), start.second);
  return out;
}

// Indices (into `objects`) of the first `n` matches in canonical order.
std::vector<std::size_t> removal_victims(const std::vector<SceneObject>& objects,
                                         const std::vector<std::size_t>& candidates, Color c,
                                         Shape s, int n) {
  std::vector<std::size_t> idx;
  for (std::size_t i : candidates) {
    if (matches(objects[i], c, s)) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return canonical_less(objects[a], objects[b]);
  });
  if (static_cast<int>(idx.size()) > n) idx.resize(static_cast<std::size_t>(n));
  return idx;
}

void write_slot(std::vector<double>& v, int slot, const SceneObject& o) {
  double* p = v.data() + slot * kSlotWidth;
  p[kPresence] = kOn;
  p[kX] = clamp_unit(o.x);
  p[kY] = clamp_unit(o.y);
  p[kSize] = clamp_unit(o.size);
  for (int c = 0; c < kNumColors; ++c) p[kColorBase + c] = c == static_cast<int>(o.color) ? kOn : kOff;
  for (int s = 0; s < kNumShapes; ++s) p[kShapeBase + s] = s == static_cast<int>(o.shape) ? kOn : kOff;
}

void clear_slot(std::vector<double>& v, int slot) {
  double* p = v.data() + slot * kSlotWidth;
  std::fill(p, p + kSlotWidth, 0.0);
  p[kPresence] = kOff;
}

std::optional<SceneObject> read_slot(const SceneLatent& latent, int slot) {
  const double* p = latent.values.data() + slot * kSlotWidth;
  if (!(p[kPresence] > 0.0)) return std::nullopt;
  int color = 0;
  for (int c = 1; c < kNumColors; ++c) {
    if (p[kColorBase + c] > p[kColorBase + color]) color = c;
  }
  int shape = 0;
  for (int s = 1; s < kNumShapes; ++s) {
    if (p[kShapeBase + s] > p[kShapeBase + shape]) shape = s;
  }
  return SceneObject{static_cast<Color>(color), static_cast<Shape>(shape), clamp_unit(p[kX]),
                     clamp_unit(p[kY]), clamp_unit(p[kSize])};
}

std::pair<double, double> group_anchor(const PromptSpec& prompt, std::size_t g) {
  if (prompt.groups.size() == 1) return {0.0, 0.0};
  const double sign = g == 0 ? 1.0 : -1.0;
  if (prompt.relation.kind == RelationKind::kPosition) {
    switch (prompt.relation.direction) {
      case Direction::kLeft: return {-0.5 * sign, 0.0};
      case Direction::kRight: return {0.5 * sign, 0.0};
      case Direction::kAbove: return {0.0, 0.5 * sign};
      case Direction::kBelow: return {0.0, -0.5 * sign};
    }
  }
  return {-0.5 * sign, 0.0};
}

}  // namespace

std::string_view name_of(Category c) { return kCategoryNames[static_cast<int>(c)]; }

std::optional<Category> parse_category(std::string_view text) {
  return lookup<Category>(kCategoryNames, text);
}

Category infer_category(const PromptSpec& p) {
  if (p.groups.size() == 1) return p.groups[0].count == 1 ? Category::kColor : Category::kCount;
  switch (p.relation.kind) {
    case RelationKind::kPosition:
      return p.groups[0].count == 1 && p.groups[1].count == 1 ? Category::kColorPos
                                                              : Category::kPosCount;
    case RelationKind::kSize: return Category::kPosSize;
    case RelationKind::kNone: break;
  }
  return p.groups[0].shape == p.groups[1].shape ? Category::kColorCount : Category::kMultiCount;
}

void PromptSpec::validate() const {
  if (groups.empty() || groups.size() > 2) throw std::invalid_argument("prompt needs 1 or 2 groups");
  for (const auto& g : groups) {
    if (g.count < 1 || g.count > kMaxCount) throw std::invalid_argument("group count out of 1..4");
  }
  if (groups.size() == 2) {
    if (groups[0].color == groups[1].color && groups[0].shape == groups[1].shape) {
      throw std::invalid_argument("the two groups must differ in colour or shape");
    }
    if (groups[0].count > 3 || groups[1].count > 3) {
      throw std::invalid_argument("two-group prompts cap each count at 3");
    }
  } else if (relation.kind != RelationKind::kNone) {
    throw std::invalid_argument("a relation requires two groups");
  }
  if (relation.kind == RelationKind::kSize && (groups[0].count != 1 || groups[1].count != 1)) {
    throw std::invalid_argument("size prompts use single objects");
  }
  if (category != infer_category(*this)) {
    throw std::invalid_argument("category " + std::string(name_of(category)) +
                                " inconsistent with prompt fields");
  }
}

std::string to_line(const PromptSpec& p) {
  std::ostringstream out;
  for (std::size_t i = 0; i < p.groups.size(); ++i) {
    if (i) out << ';';
    out << "count:" << p.groups[i].count << ",color:" << name_of(p.groups[i].color)
        << ",shape:" << name_of(p.groups[i].shape);
  }
  if (p.relation.kind == RelationKind::kPosition) out << ";relation:" << name_of(p.relation.direction);
  if (p.relation.kind == RelationKind::kSize) out << ";relation:" << name_of(p.relation.size);
  out << ";category:" << name_of(p.category);
  return out.str();
}

PromptSpec parse_prompt_line(std::string_view line) {
  auto fail = [&](const std::string& why) -> std::invalid_argument {
    return std::invalid_argument("bad prompt '" + std::string(line) + "': " + why);
  };
  PromptSpec p;
  std::optional<Category> category;
  std::size_t start = 0;
  while (start <= line.size()) {
    const std::size_t end = std::min(line.find(';', start), line.size());
    const std::string_view segment = line.substr(start, end - start);
    start = end + 1;
    if (segment.empty()) {
      if (end == line.size()) break;
      continue;
    }
    ObjectGroup g;
    bool has_count = false, has_color = false, has_shape = false, is_group = false;
    std::size_t s = 0;
    while (s <= segment.size()) {
      const std::size_t e = std::min(segment.find(',', s), segment.size());
      const std::string_view kv = segment.substr(s, e - s);
      s = e + 1;
      const std::size_t colon = kv.find(':');
      if (colon == std::string_view::npos) throw fail("expected key:value in '" + std::string(kv) + "'");
      const std::string_view key = kv.substr(0, colon);
      const std::string_view value = kv.substr(colon + 1);
      if (key == "count") {
        if (value.size() != 1 || value[0] < '1' || value[0] > '4') throw fail("count must be 1..4");
        g.count = value[0] - '0';
        has_count = is_group = true;
      } else if (key == "color") {
        auto c = parse_color(value);
        if (!c) throw fail("unknown color '" + std::string(value) + "'");
        g.color = *c;
        has_color = is_group = true;
      } else if (key == "shape") {
        auto sh = parse_shape(value);
        if (!sh) throw fail("unknown shape '" + std::string(value) + "'");
        g.shape = *sh;
        has_shape = is_group = true;
      } else if (key == "relation") {
        if (value == "none") {
          p.relation = Relation{};
        } else if (auto d = parse_direction(value)) {
          p.relation = Relation{RelationKind::kPosition, *d, SizeChange::kBigger};
        } else if (auto z = parse_size_change(value)) {
          p.relation = Relation{RelationKind::kSize, Direction::kLeft, *z};
        } else {
          throw fail("unknown relation '" + std::string(value) + "'");
        }
      } else if (key == "category") {
        category = parse_category(value);
        if (!category) throw fail("unknown category '" + std::string(value) + "'");
      } else {
        throw fail("unknown key '" + std::string(key) + "'");
      }
      if (e == segment.size()) break;
    }
    if (is_group) {
      if (!(has_count && has_color && has_shape)) throw fail("group needs count, color and shape");
      p.groups.push_back(g);
    }
    if (end == line.size()) break;
  }
  if (p.groups.empty() || p.groups.size() > 2) throw fail("expected one or two object groups");
  p.category = category ? *category : infer_category(p);
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw fail(e.what());
  }
  return p;
}

PromptSpec generate_prompt(Rng& rng, Category category) {
  PromptSpec p;
  p.category = category;
  switch (category) {
    case Category::kColor:
      p.groups = {{1, pick<Color>(rng, kNumColors), pick<Shape>(rng, kNumShapes)}};
      break;
    case Category::kCount:
      p.groups = {{uniform_int(rng, 2, 4), pick<Color>(rng, kNumColors), pick<Shape>(rng, kNumShapes)}};
      break;
    case Category::kColorCount: {
      auto [a, b] = distinct_pair(rng, true, false);
      a.count = uniform_int(rng, 1, 3);
      b.count = uniform_int(rng, 1, 3);
      p.groups = {a, b};
      break;
    }
    case Category::kColorPos: {
      auto [a, b] = distinct_pair(rng, false, false);
      p.groups = {a, b};
      p.relation = {RelationKind::kPosition, pick<Direction>(rng, kNumDirections), SizeChange::kBigger};
      break;
    }
    case Category::kPosCount: {
      auto [a, b] = distinct_pair(rng, false, false);
      do {
        a.count = uniform_int(rng, 1, 3);
        b.count = uniform_int(rng, 1, 3);
      } while (a.count == 1 && b.count == 1);
      p.groups = {a, b};
      p.relation = {RelationKind::kPosition, pick<Direction>(rng, kNumDirections), SizeChange::kBigger};
      break;
    }
    case Category::kPosSize: {
      auto [a, b] = distinct_pair(rng, false, false);
      p.groups = {a, b};
      p.relation = {RelationKind::kSize, Direction::kLeft, pick<SizeChange>(rng, 2)};
      break;
    }
    case Category::kMultiCount: {
      auto [a, b] = distinct_pair(rng, false, true);
      a.count = uniform_int(rng, 1, 3);
      b.count = uniform_int(rng, 1, 3);
      p.groups = {a, b};
      break;
    }
  }
  return p;
}

bool is_held_out(const PromptSpec& prompt) { return fnv1a(to_line(prompt)) % 10 == 3; }

PromptSpec sample_prompt(Rng& rng, Split split, std::optional<Category> category) {
  const Category cat = category ? *category : pick<Category>(rng, kNumCategories);
  while (true) {
    PromptSpec p = generate_prompt(rng, cat);
    if (split == Split::kAny || is_held_out(p) == (split == Split::kHeldOut)) return p;
  }
}

std::vector<PromptSpec> all_template_prompts() {
  std::vector<PromptSpec> out;
  std::vector<std::pair<Color, Shape>> kinds;
  for (int s = 0; s < kNumShapes; ++s) {
    for (int c = 0; c < kNumColors; ++c) kinds.emplace_back(static_cast<Color>(c), static_cast<Shape>(s));
  }
  for (auto [c, s] : kinds) {
    for (int n = 1; n <= kMaxCount; ++n) {
      PromptSpec p{{{n, c, s}}, {}, Category::kColor};
      p.category = infer_category(p);
      out.push_back(p);
    }
  }
  std::vector<Relation> relations = {Relation{}};
  for (int d = 0; d < kNumDirections; ++d) {
    relations.push_back({RelationKind::kPosition, static_cast<Direction>(d), SizeChange::kBigger});
  }
  relations.push_back({RelationKind::kSize, Direction::kLeft, SizeChange::kBigger});
  relations.push_back({RelationKind::kSize, Direction::kLeft, SizeChange::kSmaller});
  for (auto [c0, s0] : kinds) {
    for (auto [c1, s1] : kinds) {
      if (c0 == c1 && s0 == s1) continue;
      for (const auto& rel : relations) {
        for (int n0 = 1; n0 <= 3; ++n0) {
          for (int n1 = 1; n1 <= 3; ++n1) {
            if (rel.kind == RelationKind::kSize && (n0 != 1 || n1 != 1)) continue;
            PromptSpec p{{{n0, c0, s0}, {n1, c1, s1}}, rel, Category::kColor};
            p.category = infer_category(p);
            out.push_back(p);
          }
        }
      }
    }
  }
  return out;
}

bool canonical_less(const SceneObject& a, const SceneObject& b) {
  return std::tuple(static_cast<int>(a.shape), static_cast<int>(a.color), a.x, a.y, a.size) <
         std::tuple(static_cast<int>(b.shape), static_cast<int>(b.color), b.x, b.y, b.size);
}

std::vector<SceneObject> canonical_order(std::vector<SceneObject> objects) {
  std::stable_sort(objects.begin(), objects.end(), canonical_less);
  return objects;
}

DecodedScene decode_scene(const SceneLatent& latent) {
  if (latent.values.size() != static_cast<std::size_t>(kLatentDim)) {
    throw std::invalid_argument("scene latent must have dimension 66");
  }
  DecodedScene scene;
  for (int s = 0; s < kSlots; ++s) {
    if (auto o = read_slot(latent, s)) scene.objects.push_back(*o);
  }
  return scene;
}

SceneLatent encode_scene(const std::vector<SceneObject>& objects) {
  if (objects.size() > static_cast<std::size_t>(kSlots)) {
    throw std::invalid_argument("cannot encode " + std::to_string(objects.size()) +
                                " objects into 6 slots");
  }
  SceneLatent latent;
  const auto ordered = canonical_order(objects);
  for (int s = 0; s < kSlots; ++s) {
    if (static_cast<std::size_t>(s) < ordered.size()) {
      write_slot(latent.values, s, ordered[static_cast<std::size_t>(s)]);
    } else {
      clear_slot(latent.values, s);
    }
  }
  return latent;
}

double verify(const DecodedScene& scene, const PromptSpec& prompt) {
  double total = 0.0;
  int terms = 0;
  std::vector<GroupStats> stats;
  for (const auto& g : prompt.groups) {
    stats.push_back(group_stats(scene.objects, g));
    const double err = std::abs(stats.back().found - g.count) / static_cast<double>(g.count);
    total += std::max(0.0, 1.0 - err);
    ++terms;
  }
  if (prompt.relation.kind != RelationKind::kNone && stats.size() == 2) {
    total += relation_holds(prompt.relation, stats[0], stats[1]) ? 1.0 : 0.0;
    ++terms;
  }
  return terms == 0 ? 0.0 : total / terms;
}

double verify(const SceneLatent& latent, const PromptSpec& prompt) {
  return verify(decode_scene(latent), prompt);
}

std::array<double, kFeatureDim> featurize(const PromptSpec& prompt) {
  std::array<double, kFeatureDim> f{};
  for (std::size_t g = 0; g < prompt.groups.size() && g < 2; ++g) {
    const std::size_t base = g * 8;
    f[base] = prompt.groups[g].count / 4.0;
    f[base + 1 + static_cast<std::size_t>(prompt.groups[g].color)] = 1.0;
    f[base + 5 + static_cast<std::size_t>(prompt.groups[g].shape)] = 1.0;
  }
  std::size_t rel = 0;
  if (prompt.relation.kind == RelationKind::kPosition) {
    rel = 1 + static_cast<std::size_t>(prompt.relation.direction);
  } else if (prompt.relation.kind == RelationKind::kSize) {
    rel = 5 + static_cast<std::size_t>(prompt.relation.size);
  }
  f[16 + rel] = 1.0;
  f[25] = static_cast<double>(prompt.category) / 6.0;
  return f;
}

std::array<double, kFeatureDim> featurize(const EditInstruction& e) {
  std::array<double, kFeatureDim> f{};
  auto set_color = [&](std::size_t base, Color c) { f[base + static_cast<std::size_t>(c)] = 1.0; };
  auto set_shape = [&](Shape s) { f[10 + static_cast<std::size_t>(s)] = 1.0; };
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, edit::Add> || std::is_same_v<T, edit::Remove>) {
          f[std::is_same_v<T, edit::Add> ? 0 : 1] = 1.0;
          f[5] = v.count / 4.0;
          set_color(6, v.color);
          set_shape(v.shape);
        } else if constexpr (std::is_same_v<T, edit::Recolor>) {
          f[2] = 1.0;
          set_color(6, v.color);
          set_shape(v.shape);
          set_color(13, v.new_color);
        } else if constexpr (std::is_same_v<T, edit::Move>) {
          f[3] = 1.0;
          set_color(6, v.color);
          set_shape(v.shape);
          f[17 + static_cast<std::size_t>(v.direction)] = 1.0;
        } else if constexpr (std::is_same_v<T, edit::Resize>) {
          f[4] = 1.0;
          set_color(6, v.color);
          set_shape(v.shape);
          f[21 + static_cast<std::size_t>(v.size)] = 1.0;
        }
      },
      e);
  return f;
}

DecodedScene apply_edit_oracle(const DecodedScene& scene, const EditInstruction& e) {
  DecodedScene out = scene;
  auto& objs = out.objects;
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, edit::Add>) {
          const int room = kSlots - static_cast<int>(objs.size());
          const int k = std::clamp(v.count, 0, std::max(room, 0));
          for (auto [x, y] : add_positions(objs, v.color, v.shape, k)) {
            objs.push_back({v.color, v.shape, x, y, 0.0});
          }
        } else if constexpr (std::is_same_v<T, edit::Remove>) {
          std::vector<std::size_t> all(objs.size());
          std::iota(all.begin(), all.end(), std::size_t{0});
          auto victims = removal_victims(objs, all, v.color, v.shape, v.count);
          std::sort(victims.begin(), victims.end());
          for (auto it = victims.rbegin(); it != victims.rend(); ++it) {
            objs.erase(objs.begin() + static_cast<std::ptrdiff_t>(*it));
          }
        } else if constexpr (std::is_same_v<T, edit::Recolor>) {
          for (auto& o : objs) {
            if (matches(o, v.color, v.shape)) o.color = v.new_color;
          }
        } else if constexpr (std::is_same_v<T, edit::Move>) {
          for (auto& o : objs) {
            if (matches(o, v.color, v.shape)) shift(o, v.direction, 0.5);
          }
        } else if constexpr (std::is_same_v<T, edit::Resize>) {
          for (auto& o : objs) {
            if (matches(o, v.color, v.shape)) o.size = v.size == SizeChange::kBigger ? 1.0 : -1.0;
          }
        }
      },
      e);
  return out;
}

SceneLatent edit_latent_target(const SceneLatent& source, const EditInstruction& e) {
  std::vector<std::optional<SceneObject>> slots(kSlots);
  for (int s = 0; s < kSlots; ++s) slots[static_cast<std::size_t>(s)] = read_slot(source, s);

  std::vector<SceneObject> present;
  std::vector<std::size_t> present_slot;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    if (slots[s]) {
      present.push_back(*slots[s]);
      present_slot.push_back(s);
    }
  }

  if (const auto* add = std::get_if<edit::Add>(&e)) {
    std::vector<std::size_t> free;
    for (std::size_t s = 0; s < slots.size(); ++s) {
      if (!slots[s]) free.push_back(s);
    }
    const int k = std::clamp(add->count, 0, static_cast<int>(free.size()));
    const auto pos = add_positions(present, add->color, add->shape, k);
    for (int j = 0; j < k; ++j) {
      const auto [x, y] = pos[static_cast<std::size_t>(j)];
      slots[free[static_cast<std::size_t>(j)]] = SceneObject{add->color, add->shape, x, y, 0.0};
    }
  } else if (const auto* rm = std::get_if<edit::Remove>(&e)) {
    std::vector<std::size_t> all(present.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (std::size_t i : removal_victims(present, all, rm->color, rm->shape, rm->count)) {
      slots[present_slot[i]].reset();
    }
  } else if (is_real_edit(e)) {
    for (auto& slot : slots) {
      if (!slot) continue;
      DecodedScene one{{*slot}};
      slot = apply_edit_oracle(one, e).objects.front();
    }
  }

  SceneLatent out;
  for (int s = 0; s < kSlots; ++s) {
    const auto& slot = slots[static_cast<std::size_t>(s)];
    if (slot) {
      write_slot(out.values, s, *slot);
    } else {
      clear_slot(out.values, s);
    }
  }
  return out;
}

std::vector<SceneObject> oracle_scene(const PromptSpec& prompt) {
  std::vector<SceneObject> objects;
  for (std::size_t g = 0; g < prompt.groups.size(); ++g) {
    const auto& grp = prompt.groups[g];
    const auto [ax, ay] = group_anchor(prompt, g);
    double size = 0.0;
    if (prompt.relation.kind == RelationKind::kSize) {
      const bool first_bigger = prompt.relation.size == SizeChange::kBigger;
      size = (g == 0) == first_bigger ? 1.0 : -1.0;
    }
    for (int j = 0; j < grp.count; ++j) {
      const double x = ax + (j - (grp.count - 1) / 2.0) * 0.2;
      objects.push_back({grp.color, grp.shape, x, ay, size});
    }
  }
  return objects;
}

std::vector<SceneObject> oracle_scene(const PromptSpec& prompt, Rng& rng) {
  auto objects = oracle_scene(prompt);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  for (auto& o : objects) {
    o.x = clamp_unit(o.x + jitter(rng));
    o.y = clamp_unit(o.y + jitter(rng));
    o.size = clamp_unit(o.size + jitter(rng));
  }
  return objects;
}

EditInstruction corrective_edit(const DecodedScene& scene, const PromptSpec& prompt) {
  const auto& objs = scene.objects;
  if (is_perfect(verify(scene, prompt))) return edit::NoEdit{};

  auto in_prompt = [&](const SceneObject& o) {
    return std::any_of(prompt.groups.begin(), prompt.groups.end(),
                       [&](const ObjectGroup& g) { return matches(o, g.color, g.shape); });
  };

  for (const auto& g : prompt.groups) {
    const int found = count_matching(objs, g.color, g.shape);
    if (found > g.count) return edit::Remove{std::min(found - g.count, kMaxCount), g.color, g.shape};
  }
  for (const auto& g : prompt.groups) {
    const int found = count_matching(objs, g.color, g.shape);
    if (found < g.count) {
      if (static_cast<int>(objs.size()) >= kSlots) {
        for (const auto& o : objs) {
          if (!in_prompt(o)) {
            return edit::Remove{std::min(count_matching(objs, o.color, o.shape), kMaxCount), o.color,
                                o.shape};
          }
        }
      }
      return edit::Add{g.count - found, g.color, g.shape};
    }
  }

  if (prompt.groups.size() == 2 && prompt.relation.kind != RelationKind::kNone) {
    const auto a = group_stats(objs, prompt.groups[0]);
    const auto& g0 = prompt.groups[0];
    const auto& g1 = prompt.groups[1];
    if (prompt.relation.kind == RelationKind::kPosition) {
      const Direction d = prompt.relation.direction;
      bool at_edge = false;
      switch (d) {
        case Direction::kLeft: at_edge = a.mean_x <= -1.0 + 1e-9; break;
        case Direction::kRight: at_edge = a.mean_x >= 1.0 - 1e-9; break;
        case Direction::kAbove: at_edge = a.mean_y >= 1.0 - 1e-9; break;
        case Direction::kBelow: at_edge = a.mean_y <= -1.0 + 1e-9; break;
      }
      if (!at_edge) return edit::Move{g0.color, g0.shape, d};
      return edit::Move{g1.color, g1.shape, opposite(d)};
    }
    const bool bigger = prompt.relation.size == SizeChange::kBigger;
    const double target = bigger ? 1.0 : -1.0;
    if (std::abs(a.mean_size - target) > 1e-9) return edit::Resize{g0.color, g0.shape, prompt.relation.size};
    return edit::Resize{g1.color, g1.shape, bigger ? SizeChange::kSmaller : SizeChange::kBigger};
  }
  return edit::NoEdit{};
}

EditInstruction random_edit(Rng& rng) {
  const Color c = pick<Color>(rng, kNumColors);
  const Shape s = pick<Shape>(rng, kNumShapes);
  switch (uniform_int(rng, 0, 4)) {
    case 0: return edit::Add{uniform_int(rng, 1, kMaxCount), c, s};
    case 1: return edit::Remove{uniform_int(rng, 1, kMaxCount), c, s};
    case 2: {
      Color n = pick<Color>(rng, kNumColors);
      while (n == c) n = pick<Color>(rng, kNumColors);
      return edit::Recolor{c, s, n};
    }
    case 3: return edit::Move{c, s, pick<Direction>(rng, kNumDirections)};
    default: return edit::Resize{c, s, pick<SizeChange>(rng, 2)};
  }
}

EditInstruction random_breaking_edit(Rng& rng, const DecodedScene& scene, const PromptSpec& prompt,
                                     int attempts) {
  for (int i = 0; i < attempts; ++i) {
    const auto& g = prompt.groups[static_cast<std::size_t>(
        uniform_int(rng, 0, static_cast<int>(prompt.groups.size()) - 1))];
    EditInstruction e;
    switch (uniform_int(rng, 0, 4)) {
      case 0: e = edit::Add{uniform_int(rng, 1, 2), g.color, g.shape}; break;
      case 1: e = edit::Remove{uniform_int(rng, 1, g.count), g.color, g.shape}; break;
      case 2: {
        Color n = pick<Color>(rng, kNumColors);
        while (n == g.color) n = pick<Color>(rng, kNumColors);
        e = edit::Recolor{g.color, g.shape, n};
        break;
      }
      case 3: e = edit::Move{g.color, g.shape, pick<Direction>(rng, kNumDirections)}; break;
      default: e = edit::Resize{g.color, g.shape, pick<SizeChange>(rng, 2)}; break;
    }
    if (!is_perfect(verify(apply_edit_oracle(scene, e), prompt))) return e;
  }
  return edit::NoEdit{};
}

}  // namespace scenes
}  // namespace r3
