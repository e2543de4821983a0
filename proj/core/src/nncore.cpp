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

#include "r3/nncore.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace r3::nn {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string param_name(std::string_view prefix, char kind, std::size_t layer) {
  std::string name(prefix);
  name += kind;
  name += std::to_string(layer);
  return name;
}

double activate(Activation act, double z) {
  if (act == Activation::kTanh) return std::tanh(z);
  return z / (1.0 + std::exp(-z));
}

double activation_grad(Activation act, double z) {
  if (act == Activation::kTanh) {
    const double t = std::tanh(z);
    return 1.0 - t * t;
  }
  const double s = 1.0 / (1.0 + std::exp(-z));
  return s * (1.0 + z * (1.0 - s));
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

std::size_t Tensor::rows() const { return shape_.size() >= 2 ? shape_.front() : 1; }

std::size_t Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor& ParamSet::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  entries_.emplace_back(std::move(name), std::move(value));
  return entries_.back().second;
}

Tensor& ParamSet::at(std::string_view name) {
  for (auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

const Tensor& ParamSet::at(std::string_view name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

bool ParamSet::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.first == name; });
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  out.entries_.reserve(entries_.size());
  for (const auto& [n, t] : entries_) out.entries_.emplace_back(n, Tensor(t.shape()));
  return out;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first) return false;
    if (!entries_[i].second.same_shape(other.entries_[i].second)) return false;
  }
  return true;
}

void ParamSet::add_scaled(const ParamSet& other, double scale) {
  if (!same_layout(other)) throw std::invalid_argument("add_scaled: parameter layouts differ");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto dst = entries_[i].second.values();
    auto src = other.entries_[i].second.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += scale * src[k];
  }
}

void ParamSet::scale(double factor) {
  for (auto& e : entries_) {
    for (double& v : e.second.values()) v *= factor;
  }
}

double ParamSet::squared_norm() const {
  double s = 0.0;
  for (const auto& e : entries_) {
    for (double v : e.second.values()) s += v * v;
  }
  return s;
}

void ParamSet::merge(const ParamSet& other, std::string_view prefix) {
  for (const auto& [n, t] : other.entries_) add(std::string(prefix) + n, t);
}

ParamSet ParamSet::extract(std::string_view prefix) const {
  ParamSet out;
  for (const auto& [n, t] : entries_) {
    if (n.starts_with(prefix)) out.add(n.substr(prefix.size()), t);
  }
  return out;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].second.data() != b.entries_[i].second.data()) return false;
  }
  return true;
}

double max_abs_difference(const ParamSet& a, const ParamSet& b) {
  if (!a.same_layout(b)) throw std::invalid_argument("max_abs_difference: layouts differ");
  double m = 0.0;
  auto ia = a.begin();
  for (auto ib = b.begin(); ib != b.end(); ++ia, ++ib) {
    const auto& x = ia->second.data();
    const auto& y = ib->second.data();
    for (std::size_t k = 0; k < x.size(); ++k) m = std::max(m, std::abs(x[k] - y[k]));
  }
  return m;
}

void MlpSpec::validate() const {
  if (layer_dims.size() < 2) throw std::invalid_argument("MlpSpec needs at least two dims");
  for (int d : layer_dims) {
    if (d < 1) throw std::invalid_argument("MlpSpec dims must be >= 1");
  }
}

ParamSet init_params(const MlpSpec& spec, Rng& rng, std::string_view prefix) {
  spec.validate();
  ParamSet params;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto in = static_cast<std::size_t>(spec.layer_dims[l]);
    const auto out = static_cast<std::size_t>(spec.layer_dims[l + 1]);
    const double s = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-s, s);
    Tensor w({out, in});
    for (double& v : w.values()) v = dist(rng);
    params.add(param_name(prefix, 'w', l), std::move(w));
    params.add(param_name(prefix, 'b', l), Tensor({out}));
  }
  return params;
}

void linear_forward(std::span<const double> x, std::size_t batch, std::size_t in,
                    std::span<const double> w, std::size_t out, const double* bias,
                    std::span<double> y) {
  ConstMap xm(x.data(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(in));
  ConstMap wm(w.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  Map ym(y.data(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(out));
  ym.noalias() = xm * wm.transpose();
  if (bias != nullptr) {
    Eigen::Map<const Eigen::RowVectorXd> b(bias, static_cast<Eigen::Index>(out));
    ym.rowwise() += b;
  }
}

void linear_backward_params(std::span<const double> x, std::span<const double> dy,
                            std::size_t batch, std::size_t in, std::size_t out,
                            std::span<double> dw, double* db) {
  ConstMap xm(x.data(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(in));
  ConstMap dym(dy.data(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(out));
  Map dwm(dw.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  dwm.noalias() += dym.transpose() * xm;
  if (db != nullptr) {
    Eigen::Map<Eigen::RowVectorXd> b(db, static_cast<Eigen::Index>(out));
    b += dym.colwise().sum();
  }
}

void linear_backward_input(std::span<const double> dy, std::size_t batch, std::size_t in,
                           std::span<const double> w, std::size_t out, std::span<double> dx,
                           bool accumulate) {
  ConstMap dym(dy.data(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(out));
  ConstMap wm(w.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  Map dxm(dx.data(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(in));
  if (accumulate) {
    dxm.noalias() += dym * wm;
  } else {
    dxm.noalias() = dym * wm;
  }
}

MlpOutput forward(const MlpSpec& spec, const ParamSet& params, const Tensor& input,
                  std::string_view prefix) {
  spec.validate();
  if (input.rank() < 1 || input.rank() > 2) {
    throw std::invalid_argument("forward expects a rank-1 or rank-2 input");
  }
  if (input.cols() != static_cast<std::size_t>(spec.input_dim())) {
    throw std::invalid_argument("forward: input last dim " + std::to_string(input.cols()) +
                                " != " + std::to_string(spec.input_dim()));
  }
  const std::size_t batch = input.rows();
  MlpOutput result;
  result.cache.vector_input = input.rank() == 1;
  Tensor current = input.rank() == 1 ? Tensor({1, input.cols()}, input.data()) : input;

  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto in = static_cast<std::size_t>(spec.layer_dims[l]);
    const auto out = static_cast<std::size_t>(spec.layer_dims[l + 1]);
    const Tensor& w = params.at(param_name(prefix, 'w', l));
    const Tensor& b = params.at(param_name(prefix, 'b', l));
    if (w.shape() != std::vector<std::size_t>{out, in} || b.size() != out) {
      throw std::invalid_argument("forward: parameter shape mismatch at layer " +
                                  std::to_string(l));
    }
    Tensor z({batch, out});
    linear_forward(current.values(), batch, in, w.values(), out, b.data().data(), z.values());
    result.cache.layer_inputs.push_back(std::move(current));
    if (l + 1 < spec.num_layers()) {
      Tensor a({batch, out});
      for (std::size_t k = 0; k < z.size(); ++k) a[k] = activate(spec.activation, z[k]);
      result.cache.pre_activations.push_back(std::move(z));
      current = std::move(a);
    } else {
      result.cache.pre_activations.push_back(Tensor());
      current = std::move(z);
    }
  }
  if (result.cache.vector_input) {
    result.output = Tensor({current.cols()}, std::move(current.data()));
  } else {
    result.output = std::move(current);
  }
  return result;
}

Tensor backward_accumulate(const MlpSpec& spec, const ParamSet& params, const MlpCache& cache,
                           const Tensor& upstream, ParamSet& grads, std::string_view prefix) {
  const std::size_t layers = spec.num_layers();
  if (cache.layer_inputs.size() != layers) throw std::invalid_argument("backward: stale cache");
  const std::size_t batch = cache.layer_inputs.front().rows();
  const auto out_dim = static_cast<std::size_t>(spec.output_dim());
  if (upstream.size() != batch * out_dim || upstream.cols() != out_dim) {
    throw std::invalid_argument("backward: upstream shape " + shape_string(upstream.shape()) +
                                " does not match output");
  }
  Tensor delta({batch, out_dim}, upstream.data());
  for (std::size_t l = layers; l-- > 0;) {
    const auto in = static_cast<std::size_t>(spec.layer_dims[l]);
    const auto out = static_cast<std::size_t>(spec.layer_dims[l + 1]);
    if (l + 1 < layers) {
      const Tensor& z = cache.pre_activations[l];
      for (std::size_t k = 0; k < delta.size(); ++k) {
        delta[k] *= activation_grad(spec.activation, z[k]);
      }
    }
    Tensor& dw = grads.at(param_name(prefix, 'w', l));
    Tensor& db = grads.at(param_name(prefix, 'b', l));
    linear_backward_params(cache.layer_inputs[l].values(), delta.values(), batch, in, out,
                           dw.values(), db.data().data());
    Tensor next({batch, in});
    linear_backward_input(delta.values(), batch, in, params.at(param_name(prefix, 'w', l)).values(),
                          out, next.values(), false);
    delta = std::move(next);
  }
  if (cache.vector_input) return Tensor({delta.cols()}, std::move(delta.data()));
  return delta;
}

MlpGradients backward(const MlpSpec& spec, const ParamSet& params, const MlpCache& cache,
                      const Tensor& upstream, std::string_view prefix) {
  MlpGradients result;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    result.params.add(param_name(prefix, 'w', l), Tensor(params.at(param_name(prefix, 'w', l)).shape()));
    result.params.add(param_name(prefix, 'b', l), Tensor(params.at(param_name(prefix, 'b', l)).shape()));
  }
  result.input = backward_accumulate(spec, params, cache, upstream, result.params, prefix);
  return result;
}

AdamState make_adam(const ParamSet& params, double lr, double beta1, double beta2, double eps) {
  AdamState state;
  state.first_moment = params.zeros_like();
  state.second_moment = params.zeros_like();
  state.lr = lr;
  state.beta1 = beta1;
  state.beta2 = beta2;
  state.eps = eps;
  return state;
}

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state) {
  if (!params.same_layout(grads) || !params.same_layout(state.first_moment) ||
      !params.same_layout(state.second_moment)) {
    throw std::invalid_argument("adam_step: parameter, gradient and moment layouts differ");
  }
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw std::domain_error("non-finite gradient in tensor " + name);
  }
  state.step_count += 1;
  const auto t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  auto p = params.begin();
  auto m = state.first_moment.begin();
  auto v = state.second_moment.begin();
  for (auto g = grads.begin(); g != grads.end(); ++g, ++p, ++m, ++v) {
    auto pv = p->second.values();
    auto mv = m->second.values();
    auto vv = v->second.values();
    auto gv = g->second.values();
    for (std::size_t k = 0; k < pv.size(); ++k) {
      mv[k] = state.beta1 * mv[k] + (1.0 - state.beta1) * gv[k];
      vv[k] = state.beta2 * vv[k] + (1.0 - state.beta2) * gv[k] * gv[k];
      const double mhat = mv[k] / c1;
      const double vhat = vv[k] / c2;
      pv[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace r3::nn
