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

#include "r3/textpolicy.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace r3::text {
namespace {

constexpr std::array<std::string_view, kVocabSize> kTokenNames = {
    "PAD",    "BOS",   "EOS",    "THINK_OPEN", "THINK_CLOSE", "NOEDIT", "SEP",   "ADD",
    "REMOVE", "RECOLOR", "MOVE", "RESIZE",     "RED",         "GREEN",  "BLUE",  "YELLOW",
    "CIRCLE", "SQUARE", "TRIANGLE", "ONE",     "TWO",         "THREE",  "FOUR",  "LEFT",
    "RIGHT",  "ABOVE", "BELOW",  "BIGGER",     "SMALLER"};

using Dist = std::array<double, kNumEmittable>;

bool is_count(Token t) { return t >= Token::kOne && t <= Token::kFour; }
bool is_color(Token t) { return t >= Token::kRed && t <= Token::kYellow; }
bool is_shape(Token t) { return t >= Token::kCircle && t <= Token::kTriangle; }
bool is_direction(Token t) { return t >= Token::kLeft && t <= Token::kBelow; }
bool is_size(Token t) { return t == Token::kBigger || t == Token::kSmaller; }

int count_of(Token t) { return static_cast<int>(t) - static_cast<int>(Token::kOne) + 1; }
Color color_of(Token t) { return static_cast<Color>(static_cast<int>(t) - static_cast<int>(Token::kRed)); }
Shape shape_of(Token t) {
  return static_cast<Shape>(static_cast<int>(t) - static_cast<int>(Token::kCircle));
}
Direction direction_of(Token t) {
  return static_cast<Direction>(static_cast<int>(t) - static_cast<int>(Token::kLeft));
}
SizeChange size_of(Token t) {
  return static_cast<SizeChange>(static_cast<int>(t) - static_cast<int>(Token::kBigger));
}

// Softmax of logits / temperature; returns log-probabilities.
Dist log_softmax(const double* logits, double temperature) {
  Dist z;
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < kNumEmittable; ++j) {
    z[j] = logits[j] / temperature;
    mx = std::max(mx, z[j]);
  }
  double s = 0.0;
  for (int j = 0; j < kNumEmittable; ++j) s += std::exp(z[j] - mx);
  const double lse = mx + std::log(s);
  for (double& v : z) v -= lse;
  return z;
}

// Recurrent unroll shared by sampling and teacher forcing.
class Unroller {
 public:
  Unroller(const PolicyModel& policy, std::span<const double> cond_raw)
      : policy_(policy), H_(static_cast<std::size_t>(policy.config.hidden_dim)) {
    if (cond_raw.size() != static_cast<std::size_t>(policy.config.cond_dim)) {
      throw std::invalid_argument("policy condition has dimension " + std::to_string(cond_raw.size()) +
                                  ", expected " + std::to_string(policy.config.cond_dim));
    }
    nn::Tensor input({cond_raw.size()}, std::vector<double>(cond_raw.begin(), cond_raw.end()));
    auto out = nn::forward(policy.projection_spec(), policy.params, input, "proj.");
    proj_cache_ = std::move(out.cache);
    cond_ = std::move(out.output.data());
    base_.assign(H_, 0.0);
    nn::linear_forward(cond_, 1, H_, policy.params.at("w_c").values(), H_,
                       policy.params.at("b").data().data(), base_);
    h_.assign(H_, 0.0);
  }

  // Advances the cell on `input` and returns the raw logits.
  const std::vector<double>& step(Token input) {
    const auto& p = policy_.params;
    const auto E = static_cast<std::size_t>(policy_.config.embed_dim);
    std::vector<double> z = base_;
    nn::linear_forward(h_, 1, H_, p.at("w_h").values(), H_, nullptr, scratch_h(H_));
    for (std::size_t i = 0; i < H_; ++i) z[i] += scratch_[i];
    const auto emb = p.at("emb").row(static_cast<std::size_t>(input));
    nn::linear_forward(emb, 1, E, p.at("w_e").values(), H_, nullptr, scratch_h(H_));
    for (std::size_t i = 0; i < H_; ++i) h_[i] = std::tanh(z[i] + scratch_[i]);
    logits_.assign(kNumEmittable, 0.0);
    nn::linear_forward(h_, 1, H_, p.at("w_o").values(), kNumEmittable, nullptr, logits_);
    return logits_;
  }

  const std::vector<double>& hidden() const { return h_; }
  nn::MlpCache take_proj_cache() { return std::move(proj_cache_); }
  const std::vector<double>& cond() const { return cond_; }

 private:
  std::span<double> scratch_h(std::size_t n) {
    scratch_.assign(n, 0.0);
    return scratch_;
  }

  const PolicyModel& policy_;
  std::size_t H_;
  nn::MlpCache proj_cache_;
  std::vector<double> cond_;
  std::vector<double> base_;
  std::vector<double> h_;
  std::vector<double> logits_;
  std::vector<double> scratch_;
};

void add_outer(std::span<double> dst, std::span<const double> a, std::span<const double> b) {
  const std::size_t cols = b.size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == 0.0) continue;
    double* row = dst.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) row[j] += a[i] * b[j];
  }
}

}  // namespace

std::string_view token_name(Token t) { return kTokenNames[static_cast<std::size_t>(t)]; }

std::optional<Token> parse_token(std::string_view name) {
  for (std::size_t i = 0; i < kTokenNames.size(); ++i) {
    if (kTokenNames[i] == name) return static_cast<Token>(i);
  }
  return std::nullopt;
}

Token count_token(int count) {
  if (count < 1 || count > kMaxCount) throw std::invalid_argument("count token out of range");
  return static_cast<Token>(static_cast<int>(Token::kOne) + count - 1);
}
Token color_token(Color c) { return static_cast<Token>(static_cast<int>(Token::kRed) + static_cast<int>(c)); }
Token shape_token(Shape s) {
  return static_cast<Token>(static_cast<int>(Token::kCircle) + static_cast<int>(s));
}
Token direction_token(Direction d) {
  return static_cast<Token>(static_cast<int>(Token::kLeft) + static_cast<int>(d));
}
Token size_token(SizeChange s) {
  return static_cast<Token>(static_cast<int>(Token::kBigger) + static_cast<int>(s));
}

std::string to_string(const std::vector<Token>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += token_name(tokens[i]);
  }
  return out;
}

nn::MlpSpec PolicyModel::projection_spec() const {
  return {{config.cond_dim, config.proj_hidden, config.hidden_dim}, nn::Activation::kTanh};
}

PolicyModel make_policy(const PolicyConfig& config, nn::Rng& rng) {
  PolicyModel policy;
  policy.config = config;
  const auto H = static_cast<std::size_t>(config.hidden_dim);
  const auto E = static_cast<std::size_t>(config.embed_dim);
  auto glorot = [&](std::size_t out, std::size_t in) {
    const double s = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-s, s);
    nn::Tensor t({out, in});
    for (double& v : t.values()) v = dist(rng);
    return t;
  };
  policy.params.add("emb", glorot(kVocabSize, E));
  policy.params.add("w_h", glorot(H, H));
  policy.params.add("w_e", glorot(H, E));
  policy.params.add("w_c", glorot(H, H));
  policy.params.add("b", nn::Tensor({H}));
  policy.params.add("w_o", glorot(kNumEmittable, H));
  policy.params.merge(nn::init_params(policy.projection_spec(), rng), "proj.");
  return policy;
}

std::vector<double> condition_input(std::span<const double> prompt_features,
                                    const scenes::SceneLatent* latent) {
  if (prompt_features.size() != static_cast<std::size_t>(scenes::kFeatureDim)) {
    throw std::invalid_argument("prompt features must have dimension 32");
  }
  std::vector<double> cond(prompt_features.begin(), prompt_features.end());
  if (latent != nullptr) {
    if (latent->values.size() != static_cast<std::size_t>(scenes::kLatentDim)) {
      throw std::invalid_argument("scene latent must have dimension 66");
    }
    cond.insert(cond.end(), latent->values.begin(), latent->values.end());
  } else {
    cond.resize(cond.size() + scenes::kLatentDim, 0.0);
  }
  return cond;
}

std::vector<double> encode_condition(const PolicyModel& policy,
                                     std::span<const double> prompt_features,
                                     const scenes::SceneLatent* latent) {
  const auto raw = condition_input(prompt_features, latent);
  nn::Tensor input({raw.size()}, raw);
  return nn::forward(policy.projection_spec(), policy.params, input, "proj.").output.data();
}

TokenSequence sample_sequence(const PolicyModel& policy, std::span<const double> cond,
                              double temperature, nn::Rng& rng, int max_len, Stage stage) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  TokenSequence seq;
  seq.stage = stage;
  seq.temperature = temperature;
  Unroller cell(policy, cond);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Token input = Token::kBos;
  for (int k = 0; k < max_len; ++k) {
    const Dist logp = log_softmax(cell.step(input).data(), temperature);
    const double u = unif(rng);
    double acc = 0.0;
    int chosen = kNumEmittable - 1;
    for (int j = 0; j < kNumEmittable; ++j) {
      acc += std::exp(logp[j]);
      if (u < acc) {
        chosen = j;
        break;
      }
    }
    // Guard against landing on a zero-probability tail through rounding.
    while (!std::isfinite(logp[chosen]) && chosen > 0) --chosen;
    input = emitted_token(chosen);
    seq.tokens.push_back(input);
    seq.logprobs.push_back(logp[chosen]);
    if (input == Token::kEos) break;
  }
  return seq;
}

TokenSequence greedy_sequence(const PolicyModel& policy, std::span<const double> cond, int max_len,
                              Stage stage) {
  TokenSequence seq;
  seq.stage = stage;
  seq.temperature = 1.0;
  Unroller cell(policy, cond);
  Token input = Token::kBos;
  for (int k = 0; k < max_len; ++k) {
    const auto& logits = cell.step(input);
    const Dist logp = log_softmax(logits.data(), 1.0);
    int chosen = 0;
    for (int j = 1; j < kNumEmittable; ++j) {
      if (logits[static_cast<std::size_t>(j)] > logits[static_cast<std::size_t>(chosen)]) chosen = j;
    }
    input = emitted_token(chosen);
    seq.tokens.push_back(input);
    seq.logprobs.push_back(logp[chosen]);
    if (input == Token::kEos) break;
  }
  return seq;
}

SequenceEval sequence_logprobs(const PolicyModel& policy, std::span<const double> cond,
                               const std::vector<Token>& tokens, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  SequenceEval ev;
  ev.temperature = temperature;
  ev.tokens = tokens;
  ev.cond_raw.assign(cond.begin(), cond.end());
  Unroller cell(policy, cond);
  ev.hidden.push_back(std::vector<double>(static_cast<std::size_t>(policy.config.hidden_dim), 0.0));
  Token input = Token::kBos;
  for (Token t : tokens) {
    const int target = emit_index(t);
    if (target < 0 || target >= kNumEmittable) {
      throw std::invalid_argument("token " + std::string(token_name(t)) + " cannot be emitted");
    }
    const Dist logp = log_softmax(cell.step(input).data(), temperature);
    ev.hidden.push_back(cell.hidden());
    Dist p;
    for (int j = 0; j < kNumEmittable; ++j) p[j] = std::exp(logp[j]);
    ev.dists.push_back(p);
    ev.logprobs.push_back(logp[target]);
    input = t;
  }
  ev.cond = cell.cond();
  ev.proj_cache = cell.take_proj_cache();
  return ev;
}

std::vector<std::array<double, kNumEmittable>> logprob_sum_grad(const SequenceEval& eval) {
  std::vector<Dist> g(eval.tokens.size());
  for (std::size_t k = 0; k < eval.tokens.size(); ++k) {
    const int target = emit_index(eval.tokens[k]);
    for (int j = 0; j < kNumEmittable; ++j) g[k][j] = (j == target ? 1.0 : 0.0) - eval.dists[k][j];
  }
  return g;
}

void backward_scaled_logits(const PolicyModel& policy, const SequenceEval& ev,
                            const std::vector<Dist>& dlogits, nn::ParamSet& grads) {
  const auto H = static_cast<std::size_t>(policy.config.hidden_dim);
  const auto E = static_cast<std::size_t>(policy.config.embed_dim);
  const auto& p = policy.params;
  if (dlogits.size() != ev.tokens.size()) throw std::invalid_argument("dlogits length mismatch");
  auto& g_wo = grads.at("w_o");
  auto& g_wh = grads.at("w_h");
  auto& g_we = grads.at("w_e");
  auto& g_wc = grads.at("w_c");
  auto& g_b = grads.at("b");
  auto& g_emb = grads.at("emb");

  std::vector<double> dh(H, 0.0), dz(H), dcond(H, 0.0), tmp(H), demb(E);
  std::vector<double> draw(kNumEmittable);
  const double inv_t = 1.0 / ev.temperature;
  for (std::size_t k = ev.tokens.size(); k-- > 0;) {
    const auto& h_next = ev.hidden[k + 1];
    const auto& h_prev = ev.hidden[k];
    for (int j = 0; j < kNumEmittable; ++j) draw[static_cast<std::size_t>(j)] = dlogits[k][j] * inv_t;
    add_outer(g_wo.values(), draw, h_next);
    nn::linear_backward_input(draw, 1, H, p.at("w_o").values(), kNumEmittable, tmp, false);
    for (std::size_t i = 0; i < H; ++i) {
      dh[i] += tmp[i];
      dz[i] = dh[i] * (1.0 - h_next[i] * h_next[i]);
    }
    const Token input = k == 0 ? Token::kBos : ev.tokens[k - 1];
    const auto emb = p.at("emb").row(static_cast<std::size_t>(input));
    add_outer(g_wh.values(), dz, h_prev);
    add_outer(g_we.values(), dz, emb);
    add_outer(g_wc.values(), dz, ev.cond);
    for (std::size_t i = 0; i < H; ++i) g_b[i] += dz[i];
    nn::linear_backward_input(dz, 1, E, p.at("w_e").values(), H, demb, false);
    auto erow = g_emb.row(static_cast<std::size_t>(input));
    for (std::size_t i = 0; i < E; ++i) erow[i] += demb[i];
    nn::linear_backward_input(dz, 1, H, p.at("w_c").values(), H, dcond, true);
    nn::linear_backward_input(dz, 1, H, p.at("w_h").values(), H, dh, false);
  }
  nn::Tensor up({H}, dcond);
  nn::backward_accumulate(policy.projection_spec(), p, ev.proj_cache, up, grads, "proj.");
}

double cross_entropy_step(const PolicyModel& policy, std::span<const double> cond,
                          const std::vector<Token>& tokens, nn::ParamSet& grads, double weight) {
  const auto ev = sequence_logprobs(policy, cond, tokens, 1.0);
  const double n = static_cast<double>(tokens.size());
  double loss = 0.0;
  for (double lp : ev.logprobs) loss -= lp / n;
  auto g = logprob_sum_grad(ev);
  for (auto& row : g) {
    for (double& v : row) v *= -weight / n;
  }
  backward_scaled_logits(policy, ev, g, grads);
  return loss;
}

int check_format(const std::vector<Token>& t, Stage stage) {
  if (stage == Stage::kReflection) return is_invalid(parse_edit(t)) ? 0 : 1;
  std::size_t i = 0;
  auto at = [&](std::size_t k) { return k < t.size() ? t[k] : Token::kPad; };
  if (at(i++) != Token::kThinkOpen) return 0;
  int groups = 0;
  while (is_count(at(i))) {
    if (!is_color(at(i + 1)) || !is_shape(at(i + 2))) return 0;
    i += 3;
    ++groups;
    if (at(i) == Token::kSep) ++i;
  }
  if (groups == 0) return 0;
  if (at(i++) != Token::kThinkClose) return 0;
  if (at(i++) != Token::kEos) return 0;
  return i == t.size() ? 1 : 0;
}

int check_format(const TokenSequence& seq) { return check_format(seq.tokens, seq.stage); }

EditInstruction parse_edit(const std::vector<Token>& t) {
  auto at = [&](std::size_t k) { return k < t.size() ? t[k] : Token::kPad; };
  if (at(0) != Token::kThinkOpen) return edit::Invalid{0};
  std::size_t i = 1;
  while (i < t.size() && t[i] != Token::kThinkClose) {
    if (t[i] == Token::kEos || t[i] == Token::kThinkOpen) return edit::Invalid{i};
    ++i;
  }
  if (i >= t.size()) return edit::Invalid{i};
  ++i;  // THINK_CLOSE
  const std::size_t start = i;
  EditInstruction result = edit::Invalid{start};
  std::size_t end = start;
  const Token verb = at(start);
  auto need = [&](std::size_t k, bool ok) { return ok ? std::optional<std::size_t>() : std::optional(k); };
  std::optional<std::size_t> bad;
  switch (verb) {
    case Token::kNoEdit:
      result = edit::NoEdit{};
      end = start + 1;
      break;
    case Token::kAdd:
    case Token::kRemove:
      if ((bad = need(start + 1, is_count(at(start + 1))))) return edit::Invalid{*bad};
      if ((bad = need(start + 2, is_color(at(start + 2))))) return edit::Invalid{*bad};
      if ((bad = need(start + 3, is_shape(at(start + 3))))) return edit::Invalid{*bad};
      if (verb == Token::kAdd) {
        result = edit::Add{count_of(at(start + 1)), color_of(at(start + 2)), shape_of(at(start + 3))};
      } else {
        result = edit::Remove{count_of(at(start + 1)), color_of(at(start + 2)), shape_of(at(start + 3))};
      }
      end = start + 4;
      break;
    case Token::kRecolor:
    case Token::kMove:
    case Token::kResize: {
      if ((bad = need(start + 1, is_color(at(start + 1))))) return edit::Invalid{*bad};
      if ((bad = need(start + 2, is_shape(at(start + 2))))) return edit::Invalid{*bad};
      const Token arg = at(start + 3);
      const Color c = color_of(at(start + 1));
      const Shape s = shape_of(at(start + 2));
      if (verb == Token::kRecolor) {
        if (!is_color(arg)) return edit::Invalid{start + 3};
        result = edit::Recolor{c, s, color_of(arg)};
      } else if (verb == Token::kMove) {
        if (!is_direction(arg)) return edit::Invalid{start + 3};
        result = edit::Move{c, s, direction_of(arg)};
      } else {
        if (!is_size(arg)) return edit::Invalid{start + 3};
        result = edit::Resize{c, s, size_of(arg)};
      }
      end = start + 4;
      break;
    }
    default:
      return edit::Invalid{start};
  }
  if (at(end) != Token::kEos) return edit::Invalid{end};
  if (end + 1 != t.size()) return edit::Invalid{end + 1};
  return result;
}

std::vector<Token> edit_clause(const EditInstruction& e) {
  std::vector<Token> out;
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, edit::Add> || std::is_same_v<T, edit::Remove>) {
          out = {std::is_same_v<T, edit::Add> ? Token::kAdd : Token::kRemove, count_token(v.count),
                 color_token(v.color), shape_token(v.shape)};
        } else if constexpr (std::is_same_v<T, edit::Recolor>) {
          out = {Token::kRecolor, color_token(v.color), shape_token(v.shape), color_token(v.new_color)};
        } else if constexpr (std::is_same_v<T, edit::Move>) {
          out = {Token::kMove, color_token(v.color), shape_token(v.shape), direction_token(v.direction)};
        } else if constexpr (std::is_same_v<T, edit::Resize>) {
          out = {Token::kResize, color_token(v.color), shape_token(v.shape), size_token(v.size)};
        } else if constexpr (std::is_same_v<T, edit::NoEdit>) {
          out = {Token::kNoEdit};
        } else {
          throw std::invalid_argument("an invalid edit has no clause");
        }
      },
      e);
  return out;
}

std::vector<Token> oracle_plan(const scenes::PromptSpec& prompt) {
  std::vector<Token> out = {Token::kThinkOpen};
  for (std::size_t g = 0; g < prompt.groups.size(); ++g) {
    if (g) out.push_back(Token::kSep);
    out.push_back(count_token(prompt.groups[g].count));
    out.push_back(color_token(prompt.groups[g].color));
    out.push_back(shape_token(prompt.groups[g].shape));
  }
  out.push_back(Token::kThinkClose);
  out.push_back(Token::kEos);
  return out;
}

std::vector<Token> reflection_tokens(const EditInstruction& e) {
  std::vector<Token> out = {Token::kThinkOpen};
  std::visit(
      [&](const auto& v) {
        if constexpr (requires { v.color; v.shape; }) {
          out.push_back(color_token(v.color));
          out.push_back(shape_token(v.shape));
        }
      },
      e);
  out.push_back(Token::kThinkClose);
  const auto clause = edit_clause(e);
  out.insert(out.end(), clause.begin(), clause.end());
  out.push_back(Token::kEos);
  return out;
}

std::array<double, scenes::kFeatureDim> plan_features(const std::vector<Token>& tokens) {
  std::array<double, scenes::kFeatureDim> f{};
  for (Token t : tokens) {
    auto& v = f[static_cast<std::size_t>(t)];
    v = std::min(1.0, v + 0.25);
  }
  return f;
}

}  // namespace r3::text
