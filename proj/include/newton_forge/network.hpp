/*
 * Copyright 2026 The newton-forge Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Feed-forward networks f(x) = f_D(... f_1(x)) over a flat weight vector.
//
// Layer d owns an (in + 1) x out block stored column-major, so each neuron's
// incoming weights are followed by its bias. Losses are sums over the batch.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "newton_forge/autodiff.hpp"

namespace nforge {

enum class Activation { kIdentity, kRelu, kTanh, kSigmoid, kSoftmax };
enum class LossKind { kSumSquaredError, kCrossEntropy };

std::string_view to_string(Activation a);
std::string_view to_string(LossKind l);
Activation parse_activation(std::string_view s);
LossKind parse_loss(std::string_view s);

struct LayerSpec {
  std::size_t width = 0;
  Activation activation = Activation::kIdentity;
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

class Network {
 public:
  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return layers_.back().width; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  LossKind loss() const { return loss_; }
  /// n = sum over layers of (fan_in + 1) * width.
  std::size_t weight_count() const { return weight_count_; }
  /// Offset of layer `d` inside the flat weight vector.
  std::size_t layer_offset(std::size_t d) const { return offsets_.at(d); }

  /// "<input_dim>:<w1><act1>:...:<loss>", e.g. "13:64relu:64relu:1identity:sse".
  std::string arch() const;

  friend bool operator==(const Network&, const Network&) = default;

 private:
  friend Network build_mlp(std::size_t, std::vector<LayerSpec>, LossKind);
  std::size_t input_dim_ = 0;
  std::vector<LayerSpec> layers_;
  LossKind loss_ = LossKind::kSumSquaredError;
  std::size_t weight_count_ = 0;
  std::vector<std::size_t> offsets_;
};

/// Validates and builds a network. Throws ConfigError on zero widths, an
/// empty layer list, softmax on a hidden layer, or cross-entropy without a
/// softmax output layer.
Network build_mlp(std::size_t input_dim, std::vector<LayerSpec> layers, LossKind loss);

/// Inverse of Network::arch().
Network parse_arch(std::string_view arch);

struct Batch {
  Matrix features;  // b x input_dim
  Matrix targets;   // b x output_dim
  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
};

/// Throws DimensionError on shape problems and DataError when a
/// cross-entropy target row is not one-hot.
void validate_batch(const Network& network, const Batch& batch);

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
WeightVector init_weights(const Network& network, std::uint64_t seed);

/// The batch loss as a differentiable objective. Holds references; the
/// network and batch must outlive it.
class NetworkObjective final : public autodiff::Objective {
 public:
  NetworkObjective(const Network& network, const Batch& batch);
  std::size_t dimension() const override { return network_->weight_count(); }
  autodiff::Recording record(autodiff::Tape& tape,
                             const WeightVector& weights) const override;

 private:
  const Network* network_;
  const Batch* batch_;
  Matrix augmented_;  // features with a trailing ones column
};

autodiff::ForwardPass record_forward(const Network& network, const WeightVector& weights,
                                     const Batch& batch);
GradVector hvp(const Network& network, const WeightVector& weights, const Batch& batch,
               const Vector& direction);

/// Sum of squared errors or clamped cross-entropy over the batch; same code
/// path as record_forward.
double loss_value(const Network& network, const WeightVector& weights,
                  const Batch& batch);

/// Network outputs (post-activation; softmax probabilities for classifiers).
Matrix predict(const Network& network, const WeightVector& weights,
               const Matrix& features);

/// Fraction of rows whose argmax prediction matches the argmax target.
double accuracy(const Network& network, const WeightVector& weights,
                const Batch& batch);

// Model files: one text header line
//   newton-forge-model v1 n=<n> arch=<arch>
// followed by n little-endian IEEE-754 doubles.
void save_model(std::ostream& out, const Network& network, const WeightVector& weights);
void save_model(const std::string& path, const Network& network,
                const WeightVector& weights);

struct Model {
  Network network;
  WeightVector weights;
};
Model load_model(std::istream& in);
Model load_model(const std::string& path);

}  // namespace nforge
