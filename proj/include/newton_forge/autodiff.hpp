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

// Tape-based reverse-mode differentiation over dense matrices.
//
// Every primitive records its value eagerly. A reverse sweep can either run
// numerically (plain adjoint matrices, tape untouched) or be *recorded*: the
// adjoint arithmetic is appended to the same tape as ordinary nodes, so the
// resulting gradient nodes can be differentiated again. Hessian-vector
// products use exactly that: one recorded sweep for the gradient, a dot
// product with the direction, and a second sweep over the extended tape.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace nforge {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Flat weights of a model, length n.
using WeightVector = Vector;
/// Gradient (or Hessian-vector product) w.r.t. a WeightVector, length n.
using GradVector = Vector;

namespace autodiff {

struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class Op : std::uint8_t {
  kConstant,
  kParameter,
  kAdd,
  kSub,
  kMul,          // elementwise
  kMatMul,
  kTranspose,
  kScale,        // by a fixed double
  kScalarMul,    // 1x1 node times a matrix node
  kSum,          // all entries -> 1x1
  kRowSum,       // b x m -> b x 1
  kBroadcastCols,  // b x 1 -> b x m
  kAppendOnesCol,  // b x m -> b x (m+1)
  kSliceCols,
  kPadCols,
  kTanh,
  kSigmoid,
  kRelu,
  kSoftmax,      // row-wise
  kSoftmaxCrossEntropy,  // (logits, one-hot targets) -> 1x1
};

const char* op_name(Op op);

/// Probabilities below this are clamped before the log in the fused
/// softmax/cross-entropy primitive.
inline constexpr double kProbabilityFloor = 1e-12;

struct Node {
  Op op = Op::kConstant;
  NodeId lhs{};
  NodeId rhs{};
  double scale = 0.0;
  Eigen::Index start = 0;
  Eigen::Index extent = 0;
  bool requires_grad = false;
  Matrix value;
};

class Tape {
 public:
  Tape() = default;

  NodeId constant(Matrix value);
  NodeId parameter(Matrix value);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId scale(NodeId a, double factor);
  NodeId scalar_mul(NodeId scalar, NodeId a);
  NodeId sum(NodeId a);
  NodeId row_sum(NodeId a);
  NodeId broadcast_cols(NodeId a, Eigen::Index cols);
  NodeId append_ones_col(NodeId a);
  NodeId slice_cols(NodeId a, Eigen::Index start, Eigen::Index count);
  NodeId pad_cols(NodeId a, Eigen::Index start, Eigen::Index total);
  NodeId tanh(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId relu(NodeId a);
  NodeId softmax(NodeId a);
  /// -sum_ij y_ij log(max(softmax(z)_ij, kProbabilityFloor)).
  NodeId softmax_cross_entropy(NodeId logits, NodeId targets);
  /// sum_ij a_ij * b_ij as a 1x1 node.
  NodeId dot(NodeId a, NodeId b) { return sum(mul(a, b)); }

  const Node& node(NodeId id) const { return nodes_[id.index]; }
  const Matrix& value(NodeId id) const { return nodes_[id.index].value; }
  double scalar(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  /// One numeric reverse sweep from the 1x1 node `output`. Returns the
  /// adjoint of each node in `wrt`; nodes that `output` does not depend on
  /// get a zero matrix. The tape is not modified.
  std::vector<Matrix> reverse(NodeId output, std::span<const NodeId> wrt) const;

  /// One recorded reverse sweep: the adjoint computation is appended to this
  /// tape, so the returned adjoint nodes are themselves differentiable.
  /// Entries are empty where `output` does not depend on the node.
  std::vector<std::optional<NodeId>> reverse_recorded(NodeId output,
                                                     std::span<const NodeId> wrt);

 private:
  NodeId push(Node node);
  Node make(Op op, NodeId lhs, NodeId rhs) const;

  std::vector<Node> nodes_;
};

/// Reverse sweeps performed on the calling thread since it started.
std::uint64_t reverse_sweep_count();

/// Counts reverse sweeps on the current thread over its lifetime.
class SweepCounter {
 public:
  SweepCounter() : start_(reverse_sweep_count()) {}
  std::uint64_t count() const { return reverse_sweep_count() - start_; }

 private:
  std::uint64_t start_;
};

/// A contiguous range of the flat weight vector bound to one parameter node.
/// The block is stored column-major: weights[offset + r + c * rows].
struct ParameterBlock {
  NodeId node;
  std::size_t offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
};

struct Recording {
  NodeId loss;
  std::vector<ParameterBlock> params;
};

/// A scalar function of a flat weight vector that can record itself on a
/// tape. Implementations must be deterministic and must cover every weight
/// with exactly one ParameterBlock.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::size_t dimension() const = 0;
  virtual Recording record(Tape& tape, const WeightVector& weights) const = 0;
};

/// Binds `weights` as parameter nodes of the given block shapes, in order.
std::vector<ParameterBlock> bind_parameters(
    Tape& tape, const WeightVector& weights,
    std::span<const std::pair<Eigen::Index, Eigen::Index>> shapes);

struct ForwardPass {
  Tape tape;
  Recording recording;
  double loss = 0.0;
};

/// Records the objective at `weights`. Throws DimensionError on a length
/// mismatch and NonFiniteError (with the offending node index) when any
/// recorded value, including the loss, is not finite.
ForwardPass record_forward(const Objective& objective, const WeightVector& weights);

/// Gradient of the recorded loss: one reverse sweep, tape unchanged.
GradVector gradient(const ForwardPass& pass);

/// H(w) s as the gradient of (grad L(w) . s): one forward recording and two
/// reverse sweeps.
GradVector hvp(const Objective& objective, const WeightVector& weights,
               const Vector& direction);

/// Loss and gradient from a single forward recording.
struct ValueAndGradient {
  double loss = 0.0;
  GradVector gradient;
};
ValueAndGradient value_and_gradient(const Objective& objective,
                                    const WeightVector& weights);

namespace testing {
/// Negative-control hook: when enabled, the tanh adjoint rule is scaled by a
/// wrong factor so derivative checks must fail.
void set_corrupt_adjoint(bool enabled);
bool corrupt_adjoint();
}  // namespace testing

}  // namespace autodiff
}  // namespace nforge
