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

// Dense-network substrate shared by every learnable model: tensors, named
// parameter sets, a multilayer perceptron with hand-written reverse mode,
// and Adam.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace r3::nn {

using Rng = std::mt19937_64;

/// Row-major dense array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  /// Leading extent for rank-2 tensors, 1 for vectors.
  std::size_t rows() const;
  /// Trailing extent.
  std::size_t cols() const;

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor vector(std::vector<double> values);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// Named tensors in insertion order.
class ParamSet {
 public:
  using Entry = std::pair<std::string, Tensor>;

  Tensor& add(std::string name, Tensor value);
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t parameter_count() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Same names and shapes, all zeros.
  ParamSet zeros_like() const;
  /// this += scale * other; names and shapes must match.
  void add_scaled(const ParamSet& other, double scale);
  void scale(double factor);
  double squared_norm() const;
  bool same_layout(const ParamSet& other) const;

  /// Copies the entries of `other` under `prefix`.
  void merge(const ParamSet& other, std::string_view prefix = {});
  /// Entries whose name starts with `prefix`, with the prefix stripped.
  ParamSet extract(std::string_view prefix) const;

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  std::vector<Entry> entries_;
};

double max_abs_difference(const ParamSet& a, const ParamSet& b);

enum class Activation { kTanh, kSilu };

struct MlpSpec {
  std::vector<int> layer_dims;
  Activation activation = Activation::kTanh;

  std::size_t num_layers() const { return layer_dims.size() - 1; }
  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  /// Throws std::invalid_argument unless >= 2 dims, all >= 1.
  void validate() const;
};

/// Glorot-uniform weights ("w<i>", shape [out, in]) and zero biases ("b<i>").
ParamSet init_params(const MlpSpec& spec, Rng& rng, std::string_view prefix = {});

/// Per-layer values kept by forward for backward.
struct MlpCache {
  bool vector_input = false;
  std::vector<Tensor> layer_inputs;
  std::vector<Tensor> pre_activations;
};

struct MlpOutput {
  Tensor output;
  MlpCache cache;
};

/// Input is [in] or [batch, in]; output has the same rank.
MlpOutput forward(const MlpSpec& spec, const ParamSet& params, const Tensor& input,
                  std::string_view prefix = {});

struct MlpGradients {
  ParamSet params;
  Tensor input;
};

/// Gradients of sum(upstream * output) with respect to parameters and input.
MlpGradients backward(const MlpSpec& spec, const ParamSet& params, const MlpCache& cache,
                      const Tensor& upstream, std::string_view prefix = {});

/// Like backward but accumulates parameter gradients into `grads` (which must
/// already hold the prefixed entries) and returns only the input gradient.
Tensor backward_accumulate(const MlpSpec& spec, const ParamSet& params, const MlpCache& cache,
                           const Tensor& upstream, ParamSet& grads, std::string_view prefix = {});

struct AdamState {
  ParamSet first_moment;
  ParamSet second_moment;
  std::uint64_t step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam(const ParamSet& params, double lr = 1e-3, double beta1 = 0.9,
                    double beta2 = 0.999, double eps = 1e-8);

/// One bias-corrected Adam update in place. Throws std::domain_error naming the
/// first tensor with a non-finite gradient entry, before touching anything.
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state);

// Dense kernels, exposed for the recurrent policy.

/// out[B, out] = x[B, in] * w[out, in]^T (+ bias[out] when non-null).
void linear_forward(std::span<const double> x, std::size_t batch, std::size_t in,
                    std::span<const double> w, std::size_t out, const double* bias,
                    std::span<double> y);
/// dw[out, in] += dy[B, out]^T * x[B, in]; db[out] += column sums of dy.
void linear_backward_params(std::span<const double> x, std::span<const double> dy,
                            std::size_t batch, std::size_t in, std::size_t out,
                            std::span<double> dw, double* db);
/// dx[B, in] (+)= dy[B, out] * w[out, in].
void linear_backward_input(std::span<const double> dy, std::size_t batch, std::size_t in,
                           std::span<const double> w, std::size_t out, std::span<double> dx,
                           bool accumulate);

}  // namespace r3::nn
