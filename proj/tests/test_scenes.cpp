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

#include <algorithm>
#include <map>
#include <set>

#include "r3/scenes.hpp"

namespace r3::scenes {
namespace {

PromptSpec single(int n, Color c, Shape s) {
  PromptSpec p;
  p.groups = {{n, c, s}};
  p.category = Category::kCount;
  return p;
}

std::multiset<std::tuple<int, int, double, double, double>> as_multiset(const std::vector<SceneObject>& objs) {
  std::multiset<std::tuple<int, int, double, double, double>> out;
  for (const auto& o : objs) out.insert({static_cast<int>(o.color), static_cast<int>(o.shape), o.x, o.y, o.size});
  return out;
}

TEST(GeneratePrompt, CategoryStructure) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    auto p = generate_prompt(rng, Category::kCount);
    EXPECT_EQ(p.groups.size(), 1u);
    EXPECT_EQ(p.relation.kind, RelationKind::kNone);

    auto ps = generate_prompt(rng, Category::kPosSize);
    ASSERT_EQ(ps.groups.size(), 2u);
    EXPECT_EQ(ps.relation.kind, RelationKind::kSize);
    EXPECT_EQ(ps.groups[0].count, 1);
    EXPECT_EQ(ps.groups[1].count, 1);

    auto mc = generate_prompt(rng, Category::kMultiCount);
    ASSERT_EQ(mc.groups.size(), 2u);
    EXPECT_FALSE(mc.groups[0].color == mc.groups[1].color && mc.groups[0].shape == mc.groups[1].shape);
    EXPECT_LE(mc.groups[0].count + mc.groups[1].count, kSlots);

    for (auto c : kAllCategories) {
      auto q = generate_prompt(rng, c);
      EXPECT_NO_THROW(q.validate());
      EXPECT_EQ(q.category, c);
      EXPECT_EQ(infer_category(q), c);
    }
  }
}

TEST(GeneratePrompt, SameSeedSameSpec) {
  Rng a(9), b(9);
  for (auto c : kAllCategories) EXPECT_EQ(generate_prompt(a, c), generate_prompt(b, c));
}

TEST(PromptSpec, ValidationAndLineForm) {
  PromptSpec bad;
  bad.groups = {{1, Color::kRed, Shape::kCircle}};
  bad.relation.kind = RelationKind::kPosition;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  PromptSpec zero = single(0, Color::kRed, Shape::kCircle);
  EXPECT_THROW(zero.validate(), std::invalid_argument);

  for (const auto& p : all_template_prompts()) EXPECT_EQ(parse_prompt_line(to_line(p)), p);
  auto q = parse_prompt_line("count:3,color:red,shape:circle");
  EXPECT_EQ(q.groups.size(), 1u);
  EXPECT_EQ(q.groups[0].count, 3);
  EXPECT_THROW(parse_prompt_line("count:3,color:mauve,shape:circle"), std::invalid_argument);
}

TEST(Split, HeldOutIsDisjointAndAboutTenPercent) {
  const auto all = all_template_prompts();
  int held = 0;
  for (const auto& p : all) held += is_held_out(p);
  const double frac = static_cast<double>(held) / all.size();
  EXPECT_GT(frac, 0.05);
  EXPECT_LT(frac, 0.15);
  Rng rng(4);
  for (int i = 0; i < 300; ++i) {
    EXPECT_FALSE(is_held_out(sample_prompt(rng, Split::kTrain)));
    EXPECT_TRUE(is_held_out(sample_prompt(rng, Split::kHeldOut)));
  }
}

TEST(Decode, Examples) {
  SceneLatent empty;
  for (int s = 0; s < kSlots; ++s) empty.values[s * kSlotWidth] = -2.0;
  EXPECT_TRUE(decode_scene(empty).objects.empty());

  SceneLatent one = empty;
  const double slot[kSlotWidth] = {2, 0.1, 0.2, 1, 2, -2, -2, -2, -2, 2, -2};
  std::copy(slot, slot + kSlotWidth, one.values.begin());
  auto d = decode_scene(one);
  ASSERT_EQ(d.objects.size(), 1u);
  EXPECT_EQ(d.objects[0], (SceneObject{Color::kRed, Shape::kSquare, 0.1, 0.2, 1.0}));

  SceneLatent tied = empty;
  const double tie[kSlotWidth] = {2, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0};
  std::copy(tie, tie + kSlotWidth, tied.values.begin() + kSlotWidth);
  auto t = decode_scene(tied);
  ASSERT_EQ(t.objects.size(), 1u);
  EXPECT_EQ(t.objects[0].color, Color::kRed);
  EXPECT_EQ(t.objects[0].shape, Shape::kCircle);

  SceneLatent wild = empty;
  wild.values[0] = 1.0;
  wild.values[1] = 3.0;
  wild.values[2] = -7.0;
  auto w = decode_scene(wild);
  EXPECT_EQ(w.objects[0].x, 1.0);
  EXPECT_EQ(w.objects[0].y, -1.0);
}

TEST(Encode, LayoutAndRoundTrip) {
  auto e = encode_scene({});
  for (int s = 0; s < kSlots; ++s) {
    EXPECT_EQ(e.values[s * kSlotWidth], -2.0);
    for (int k = 1; k < kSlotWidth; ++k) EXPECT_EQ(e.values[s * kSlotWidth + k], 0.0);
  }

  std::vector<SceneObject> objs{{Color::kBlue, Shape::kTriangle, 0.3, -0.2, 1.0},
                                {Color::kRed, Shape::kCircle, 0.5, 0.5, 0.0},
                                {Color::kRed, Shape::kCircle, 0.5, 0.5, 0.0},
                                {Color::kGreen, Shape::kCircle, -0.9, 0.1, -1.0}};
  auto lat = encode_scene(objs);
  EXPECT_EQ(lat.values[0], 2.0);
  auto back = decode_scene(lat).objects;
  EXPECT_EQ(back, canonical_order(objs));
  EXPECT_EQ(back.size(), 4u);
  // canonical order: shape, then colour, then x
  EXPECT_EQ(back.front().color, Color::kRed);
  EXPECT_EQ(back.back().shape, Shape::kTriangle);

  EXPECT_THROW(encode_scene(std::vector<SceneObject>(kSlots + 1)), std::invalid_argument);

  Rng rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> n(0, kSlots), c(0, 3), s(0, 2);
  for (int i = 0; i < 200; ++i) {
    std::vector<SceneObject> o(n(rng));
    for (auto& x : o) x = {static_cast<Color>(c(rng)), static_cast<Shape>(s(rng)), u(rng), u(rng), u(rng)};
    EXPECT_EQ(as_multiset(decode_scene(encode_scene(o)).objects), as_multiset(o));
  }
}

TEST(Verify, RuleExamples) {
  auto p = single(3, Color::kRed, Shape::kCircle);
  std::vector<SceneObject> three{{Color::kRed, Shape::kCircle, -0.5, 0, 0},
                                 {Color::kRed, Shape::kCircle, 0, 0, 0},
                                 {Color::kRed, Shape::kCircle, 0.5, 0, 0}};
  EXPECT_EQ(verify(encode_scene(three), p), 1.0);
  three.pop_back();
  EXPECT_NEAR(verify(encode_scene(three), p), 1.0 - 1.0 / 3.0, 1e-15);
  EXPECT_EQ(verify(encode_scene({}), p), 0.0);

  PromptSpec rel;
  rel.groups = {{1, Color::kRed, Shape::kCircle}, {1, Color::kBlue, Shape::kSquare}};
  rel.relation = {RelationKind::kPosition, Direction::kLeft, SizeChange::kBigger};
  rel.category = Category::kColorPos;
  std::vector<SceneObject> wrong{{Color::kRed, Shape::kCircle, 0.5, 0, 0}, {Color::kBlue, Shape::kSquare, -0.5, 0, 0}};
  EXPECT_NEAR(verify(encode_scene(wrong), rel), 2.0 / 3.0, 1e-15);
  std::vector<SceneObject> right{{Color::kRed, Shape::kCircle, -0.5, 0, 0}, {Color::kBlue, Shape::kSquare, 0.5, 0, 0}};
  EXPECT_EQ(verify(encode_scene(right), rel), 1.0);
  // within the margin is not enough
  std::vector<SceneObject> close{{Color::kRed, Shape::kCircle, 0.0, 0, 0}, {Color::kBlue, Shape::kSquare, 0.05, 0, 0}};
  EXPECT_NEAR(verify(encode_scene(close), rel), 2.0 / 3.0, 1e-15);
  // relation with one side missing scores zero
  std::vector<SceneObject> half{{Color::kRed, Shape::kCircle, -0.5, 0, 0}};
  EXPECT_NEAR(verify(encode_scene(half), rel), 1.0 / 3.0, 1e-15);

  PromptSpec sz = rel;
  sz.relation = {RelationKind::kSize, Direction::kLeft, SizeChange::kBigger};
  sz.category = Category::kPosSize;
  std::vector<SceneObject> big{{Color::kRed, Shape::kCircle, 0, 0, 1.0}, {Color::kBlue, Shape::kSquare, 0, 0.5, -1.0}};
  EXPECT_EQ(verify(encode_scene(big), sz), 1.0);
}

TEST(Verify, OracleScenesArePerfectAndScoresBounded) {
  Rng rng(3);
  for (const auto& p : all_template_prompts()) {
    EXPECT_EQ(verify(encode_scene(oracle_scene(p)), p), 1.0) << to_line(p);
    EXPECT_TRUE(is_perfect(verify(encode_scene(oracle_scene(p, rng)), p))) << to_line(p);
  }
  std::normal_distribution<double> n(0.0, 2.0);
  for (int i = 0; i < 500; ++i) {
    SceneLatent l;
    for (double& v : l.values) v = n(rng);
    const double v = verify(l, sample_prompt(rng, Split::kAny));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Featurize, Layout) {
  for (double v : featurize(edit::NoEdit{})) EXPECT_EQ(v, 0.0);
  auto add = featurize(edit::Add{2, Color::kBlue, Shape::kSquare});
  EXPECT_EQ(add[0], 1.0);               // verb
  EXPECT_EQ(add[5], 0.5);               // count / 4
  EXPECT_EQ(add[6 + 2], 1.0);           // colour
  EXPECT_EQ(add[10 + 1], 1.0);          // shape
  for (int i = 27; i < kFeatureDim; ++i) EXPECT_EQ(add[i], 0.0);

  auto p = single(4, Color::kYellow, Shape::kTriangle);
  auto f = featurize(p);
  EXPECT_EQ(f[0], 1.0);
  EXPECT_EQ(f[1 + 3], 1.0);
  EXPECT_EQ(f[5 + 2], 1.0);
  EXPECT_EQ(featurize(p), featurize(p));
}

TEST(Featurize, TemplatePromptsCollisionFree) {
  const auto all = all_template_prompts();
  std::map<std::array<double, kFeatureDim>, std::string> seen;
  for (const auto& p : all) {
    auto [it, fresh] = seen.emplace(featurize(p), to_line(p));
    EXPECT_TRUE(fresh) << to_line(p) << " collides with " << it->second;
  }
}

TEST(EditOracle, Examples) {
  auto added = apply_edit_oracle({}, edit::Add{2, Color::kRed, Shape::kCircle});
  ASSERT_EQ(added.objects.size(), 2u);
  for (const auto& o : added.objects) EXPECT_EQ((std::pair{o.color, o.shape}), (std::pair{Color::kRed, Shape::kCircle}));

  DecodedScene one{{{Color::kRed, Shape::kCircle, 0, 0, 0}}};
  EXPECT_TRUE(apply_edit_oracle(one, edit::Remove{3, Color::kRed, Shape::kCircle}).objects.empty());
  EXPECT_EQ(apply_edit_oracle(one, edit::Recolor{Color::kBlue, Shape::kSquare, Color::kGreen}), one);
  EXPECT_EQ(apply_edit_oracle(one, edit::NoEdit{}), one);
  EXPECT_EQ(apply_edit_oracle(one, edit::Invalid{2}), one);

  auto moved = apply_edit_oracle(one, edit::Move{Color::kRed, Shape::kCircle, Direction::kLeft});
  EXPECT_EQ(moved.objects[0].x, -0.5);
  auto edge = apply_edit_oracle(DecodedScene{{{Color::kRed, Shape::kCircle, 0.8, 0, 0}}},
                                edit::Move{Color::kRed, Shape::kCircle, Direction::kRight});
  EXPECT_EQ(edge.objects[0].x, 1.0);
  auto grown = apply_edit_oracle(one, edit::Resize{Color::kRed, Shape::kCircle, SizeChange::kBigger});
  EXPECT_EQ(grown.objects[0].size, 1.0);
  auto recol = apply_edit_oracle(one, edit::Recolor{Color::kRed, Shape::kCircle, Color::kYellow});
  EXPECT_EQ(recol.objects[0].color, Color::kYellow);
}

TEST(EditOracle, CapsAndRanges) {
  Rng rng(6);
  for (int i = 0; i < 2000; ++i) {
    auto p = sample_prompt(rng, Split::kAny);
    DecodedScene s{oracle_scene(p, rng)};
    for (int k = 0; k < 4; ++k) s = apply_edit_oracle(s, random_edit(rng));
    EXPECT_LE(s.objects.size(), static_cast<std::size_t>(kSlots));
    for (const auto& o : s.objects) {
      EXPECT_LE(std::abs(o.x), 1.0);
      EXPECT_LE(std::abs(o.y), 1.0);
      EXPECT_LE(std::abs(o.size), 1.0);
    }
  }
}

TEST(EditOracle, LatentTargetAgreesWithSceneOracle) {
  Rng rng(8);
  std::normal_distribution<double> n(0.0, 0.1);
  for (int i = 0; i < 1000; ++i) {
    auto p = sample_prompt(rng, Split::kAny);
    DecodedScene s{oracle_scene(p, rng)};
    s = apply_edit_oracle(s, random_edit(rng));
    auto lat = encode_scene(s.objects);
    for (double& v : lat.values) v += n(rng);
    const auto e = random_edit(rng);
    const auto target = edit_latent_target(lat, e);
    EXPECT_EQ(as_multiset(decode_scene(target).objects),
              as_multiset(apply_edit_oracle(decode_scene(lat), e).objects))
        << to_string(e);
  }
}

TEST(CorrectiveEdit, NoEditIffPerfectAndConverges) {
  Rng rng(10);
  for (const auto& p : all_template_prompts()) {
    EXPECT_TRUE(is_no_edit(corrective_edit(DecodedScene{oracle_scene(p)}, p)));
  }
  int converged = 0, trials = 0;
  for (int i = 0; i < 500; ++i) {
    auto p = sample_prompt(rng, Split::kAny);
    DecodedScene s{oracle_scene(p, rng)};
    const auto breaker = random_breaking_edit(rng, s, p);
    if (is_no_edit(breaker)) continue;
    s = apply_edit_oracle(s, breaker);
    ASSERT_FALSE(is_perfect(verify(s, p)));
    EXPECT_FALSE(is_no_edit(corrective_edit(s, p)));
    ++trials;
    for (int k = 0; k < 4 && !is_perfect(verify(s, p)); ++k) s = apply_edit_oracle(s, corrective_edit(s, p));
    converged += is_perfect(verify(s, p));
  }
  EXPECT_GT(trials, 400);
  EXPECT_GE(converged, trials * 9 / 10);
}

}  // namespace
}  // namespace r3::scenes
