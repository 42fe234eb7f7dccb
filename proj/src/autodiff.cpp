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

#include "newton_forge/autodiff.hpp"

#include <atomic>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>

#include "newton_forge/error.hpp"

namespace nforge::autodiff {
namespace {

thread_local std::uint64_t tls_sweeps = 0;
std::atomic<bool> g_corrupt_adjoint{false};

Matrix softmax_rows(const Matrix& z) {
  Matrix p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double shift = z.row(i).maxCoeff();
    p.row(i) = (z.row(i).array() - shift).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Matrix append_ones(const Matrix& a) {
  Matrix out(a.rows(), a.cols() + 1);
  out.leftCols(a.cols()) = a;
  out.col(a.cols()).setOnes();
  return out;
}

Matrix pad(const Matrix& a, Eigen::Index start, Eigen::Index total) {
  Matrix out = Matrix::Zero(a.rows(), total);
  out.middleCols(start, a.cols()) = a;
  return out;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream msg;
    msg << op << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs "
        << b.rows() << "x" << b.cols();
    throw DimensionError(msg.str());
  }
}

// Adjoint rules are written once against a backend. NumericBackend works on
// plain matrices; RecordingBackend appends every operation to the tape so the
// adjoints stay differentiable.
struct NumericBackend {
  using Val = Matrix;
  const Tape& tape;

  Val val(NodeId id) const { return tape.value(id); }
  Val constant(Matrix m) const { return m; }
  Val add(const Val& a, const Val& b) const { return a + b; }
  Val sub(const Val& a, const Val& b) const { return a - b; }
  Val mul(const Val& a, const Val& b) const { return a.cwiseProduct(b); }
  Val matmul(const Val& a, const Val& b) const { return a * b; }
  Val transpose(const Val& a) const { return a.transpose(); }
  Val scale(const Val& a, double f) const { return a * f; }
  Val scalar_mul(const Val& s, const Val& a) const { return s(0, 0) * a; }
  Val sum(const Val& a) const { return Matrix::Constant(1, 1, a.sum()); }
  Val row_sum(const Val& a) const { return a.rowwise().sum(); }
  Val broadcast_cols(const Val& a, Eigen::Index cols) const {
    return a.replicate(1, cols);
  }
  Val slice_cols(const Val& a, Eigen::Index start, Eigen::Index count) const {
    return a.middleCols(start, count);
  }
  Val pad_cols(const Val& a, Eigen::Index start, Eigen::Index total) const {
    return pad(a, start, total);
  }
  Val softmax(NodeId id) const { return softmax_rows(tape.value(id)); }
};

struct RecordingBackend {
  using Val = NodeId;
  Tape& tape;

  Val val(NodeId id) const { return id; }
  Val constant(Matrix m) const { return tape.constant(std::move(m)); }
  Val add(Val a, Val b) const { return tape.add(a, b); }
  Val sub(Val a, Val b) const { return tape.sub(a, b); }
  Val mul(Val a, Val b) const { return tape.mul(a, b); }
  Val matmul(Val a, Val b) const { return tape.matmul(a, b); }
  Val transpose(Val a) const { return tape.transpose(a); }
  Val scale(Val a, double f) const { return tape.scale(a, f); }
  Val scalar_mul(Val s, Val a) const { return tape.scalar_mul(s, a); }
  Val sum(Val a) const { return tape.sum(a); }
  Val row_sum(Val a) const { return tape.row_sum(a); }
  Val broadcast_cols(Val a, Eigen::Index cols) const {
    return tape.broadcast_cols(a, cols);
  }
  Val slice_cols(Val a, Eigen::Index start, Eigen::Index count) const {
    return tape.slice_cols(a, start, count);
  }
  Val pad_cols(Val a, Eigen::Index start, Eigen::Index total) const {
    return tape.pad_cols(a, start, total);
  }
  Val softmax(NodeId id) const { return tape.softmax(id); }
};

// Node fields needed by the rules; copied because a recording sweep grows
// the node vector underneath us.
struct NodeInfo {
  NodeId self;
  Op op;
  NodeId lhs;
  NodeId rhs;
  double scale;
  Eigen::Index start;
  Eigen::Index extent;
  Eigen::Index rows;
  Eigen::Index cols;
  Eigen::Index lhs_cols;
};

template <class Backend, class Accumulate>
void apply_rule(const Backend& b, const Tape& tape, const NodeInfo& n,
                const typename Backend::Val& g, Accumulate&& acc) {
  auto ones = [](Eigen::Index r, Eigen::Index c) { return Matrix::Ones(r, c); };
  switch (n.op) {
    case Op::kConstant:
    case Op::kParameter:
      break;
    case Op::kAdd:
      acc(n.lhs, g);
      acc(n.rhs, g);
      break;
    case Op::kSub:
      acc(n.lhs, g);
      acc(n.rhs, [&] { return b.scale(g, -1.0); });
      break;
    case Op::kMul:
      acc(n.lhs, [&] { return b.mul(g, b.val(n.rhs)); });
      acc(n.rhs, [&] { return b.mul(g, b.val(n.lhs)); });
      break;
    case Op::kMatMul:
      acc(n.lhs, [&] { return b.matmul(g, b.transpose(b.val(n.rhs))); });
      acc(n.rhs, [&] { return b.matmul(b.transpose(b.val(n.lhs)), g); });
      break;
    case Op::kTranspose:
      acc(n.lhs, [&] { return b.transpose(g); });
      break;
    case Op::kScale:
      acc(n.lhs, [&] { return b.scale(g, n.scale); });
      break;
    case Op::kScalarMul:
      acc(n.lhs, [&] { return b.sum(b.mul(b.val(n.rhs), g)); });
      acc(n.rhs, [&] { return b.scalar_mul(b.val(n.lhs), g); });
      break;
    case Op::kSum: {
      const Matrix& in = tape.value(n.lhs);
      acc(n.lhs, [&] { return b.scalar_mul(g, b.constant(ones(in.rows(), in.cols()))); });
      break;
    }
    case Op::kRowSum:
      acc(n.lhs, [&] { return b.broadcast_cols(g, n.lhs_cols); });
      break;
    case Op::kBroadcastCols:
      acc(n.lhs, [&] { return b.row_sum(g); });
      break;
    case Op::kAppendOnesCol:
      acc(n.lhs, [&] { return b.slice_cols(g, 0, n.lhs_cols); });
      break;
    case Op::kSliceCols:
      acc(n.lhs, [&] { return b.pad_cols(g, n.start, n.lhs_cols); });
      break;
    case Op::kPadCols:
      acc(n.lhs, [&] { return b.slice_cols(g, n.start, n.lhs_cols); });
      break;
    case Op::kTanh:
      acc(n.lhs, [&] {
        auto y = b.val(n.self);
        auto d = b.mul(g, b.sub(b.constant(ones(n.rows, n.cols)), b.mul(y, y)));
        return testing::corrupt_adjoint() ? b.scale(d, 1.5) : d;
      });
      break;
    case Op::kSigmoid:
      acc(n.lhs, [&] {
        auto y = b.val(n.self);
        return b.mul(g, b.mul(y, b.sub(b.constant(ones(n.rows, n.cols)), y)));
      });
      break;
    case Op::kRelu:
      acc(n.lhs, [&] {
        // Subgradient 0 at the kink.
        Matrix mask = (tape.value(n.lhs).array() > 0.0).cast<double>().matrix();
        return b.mul(g, b.constant(std::move(mask)));
      });
      break;
    case Op::kSoftmax:
      acc(n.lhs, [&] {
        auto y = b.val(n.self);
        auto gy = b.mul(y, g);
        return b.sub(gy, b.mul(y, b.broadcast_cols(b.row_sum(gy), n.cols)));
      });
      break;
    case Op::kSoftmaxCrossEntropy:
      acc(n.lhs, [&] {
        // d/dz of -sum y log max(p, floor): clamped entries contribute nothing,
        // the rest give p * rowsum(y_eff) - y_eff.
        const Matrix p = softmax_rows(tape.value(n.lhs));
        const Matrix& y = tape.value(n.rhs);
        Matrix y_eff = (p.array() >= kProbabilityFloor).select(y, 0.0);
        Matrix row_mass = y_eff.rowwise().sum().replicate(1, y.cols());
        auto probs = b.softmax(n.lhs);
        return b.scalar_mul(
            g, b.sub(b.mul(probs, b.constant(std::move(row_mass))),
                     b.constant(std::move(y_eff))));
      });
      break;
  }
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kParameter: return "parameter";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kScale: return "scale";
    case Op::kScalarMul: return "scalar_mul";
    case Op::kSum: return "sum";
    case Op::kRowSum: return "row_sum";
    case Op::kBroadcastCols: return "broadcast_cols";
    case Op::kAppendOnesCol: return "append_ones_col";
    case Op::kSliceCols: return "slice_cols";
    case Op::kPadCols: return "pad_cols";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kRelu: return "relu";
    case Op::kSoftmax: return "softmax";
    case Op::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

NodeId Tape::push(Node node) {
  const std::size_t index = nodes_.size();
  if (!node.value.allFinite()) {
    std::ostringstream msg;
    msg << "non-finite value at tape node " << index << " (" << op_name(node.op)
        << ")";
    throw NonFiniteError(msg.str(), index);
  }
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::uint32_t>(index)};
}

Node Tape::make(Op op, NodeId lhs, NodeId rhs) const {
  Node n;
  n.op = op;
  n.lhs = lhs;
  n.rhs = rhs;
  n.requires_grad = node(lhs).requires_grad || node(rhs).requires_grad;
  return n;
}

NodeId Tape::constant(Matrix value) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::parameter(Matrix value) {
  Node n;
  n.op = Op::kParameter;
  n.requires_grad = true;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  require_same_shape(value(a), value(b), "add");
  Node n = make(Op::kAdd, a, b);
  n.value = value(a) + value(b);
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  require_same_shape(value(a), value(b), "sub");
  Node n = make(Op::kSub, a, b);
  n.value = value(a) - value(b);
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  require_same_shape(value(a), value(b), "mul");
  Node n = make(Op::kMul, a, b);
  n.value = value(a).cwiseProduct(value(b));
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  if (value(a).cols() != value(b).rows()) {
    std::ostringstream msg;
    msg << "matmul: inner dimensions " << value(a).cols() << " and "
        << value(b).rows() << " differ";
    throw DimensionError(msg.str());
  }
  Node n = make(Op::kMatMul, a, b);
  n.value.noalias() = value(a) * value(b);
  return push(std::move(n));
}

NodeId Tape::transpose(NodeId a) {
  Node n = make(Op::kTranspose, a, a);
  n.value = value(a).transpose();
  return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double factor) {
  Node n = make(Op::kScale, a, a);
  n.scale = factor;
  n.value = value(a) * factor;
  return push(std::move(n));
}

NodeId Tape::scalar_mul(NodeId s, NodeId a) {
  if (value(s).size() != 1) throw DimensionError("scalar_mul: lhs is not 1x1");
  Node n = make(Op::kScalarMul, s, a);
  n.value = value(s)(0, 0) * value(a);
  return push(std::move(n));
}

NodeId Tape::sum(NodeId a) {
  Node n = make(Op::kSum, a, a);
  n.value = Matrix::Constant(1, 1, value(a).sum());
  return push(std::move(n));
}

NodeId Tape::row_sum(NodeId a) {
  Node n = make(Op::kRowSum, a, a);
  n.extent = value(a).cols();
  n.value = value(a).rowwise().sum();
  return push(std::move(n));
}

NodeId Tape::broadcast_cols(NodeId a, Eigen::Index cols) {
  if (value(a).cols() != 1) throw DimensionError("broadcast_cols: input is not a column");
  Node n = make(Op::kBroadcastCols, a, a);
  n.extent = cols;
  n.value = value(a).replicate(1, cols);
  return push(std::move(n));
}

NodeId Tape::append_ones_col(NodeId a) {
  Node n = make(Op::kAppendOnesCol, a, a);
  n.value = append_ones(value(a));
  return push(std::move(n));
}

NodeId Tape::slice_cols(NodeId a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > value(a).cols()) {
    throw DimensionError("slice_cols: range out of bounds");
  }
  Node n = make(Op::kSliceCols, a, a);
  n.start = start;
  n.extent = count;
  n.value = value(a).middleCols(start, count);
  return push(std::move(n));
}

NodeId Tape::pad_cols(NodeId a, Eigen::Index start, Eigen::Index total) {
  if (start < 0 || start + value(a).cols() > total) {
    throw DimensionError("pad_cols: range out of bounds");
  }
  Node n = make(Op::kPadCols, a, a);
  n.start = start;
  n.extent = total;
  n.value = pad(value(a), start, total);
  return push(std::move(n));
}

NodeId Tape::tanh(NodeId a) {
  Node n = make(Op::kTanh, a, a);
  n.value = value(a).array().tanh().matrix();
  return push(std::move(n));
}

NodeId Tape::sigmoid(NodeId a) {
  Node n = make(Op::kSigmoid, a, a);
  n.value = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
  return push(std::move(n));
}

NodeId Tape::relu(NodeId a) {
  Node n = make(Op::kRelu, a, a);
  n.value = value(a).cwiseMax(0.0);
  return push(std::move(n));
}

NodeId Tape::softmax(NodeId a) {
  Node n = make(Op::kSoftmax, a, a);
  n.value = softmax_rows(value(a));
  return push(std::move(n));
}

NodeId Tape::softmax_cross_entropy(NodeId logits, NodeId targets) {
  require_same_shape(value(logits), value(targets), "softmax_cross_entropy");
  if (node(targets).requires_grad) {
    throw DimensionError("softmax_cross_entropy: targets must be constant");
  }
  Node n = make(Op::kSoftmaxCrossEntropy, logits, targets);
  const Matrix p = softmax_rows(value(logits));
  const auto logp = p.array().max(kProbabilityFloor).log();
  n.value = Matrix::Constant(1, 1, -(value(targets).array() * logp).sum());
  return push(std::move(n));
}

double Tape::scalar(NodeId id) const {
  const Matrix& v = value(id);
  if (v.size() != 1) throw DimensionError("expected a 1x1 node");
  return v(0, 0);
}

namespace {

NodeInfo info_of(const Tape& tape, std::uint32_t i) {
  const Node& n = tape.node(NodeId{i});
  NodeInfo info{NodeId{i}, n.op,         n.lhs,          n.rhs,          n.scale,
                n.start,   n.extent,     n.value.rows(), n.value.cols(), 0};
  if (n.op != Op::kConstant && n.op != Op::kParameter) {
    info.lhs_cols = tape.value(n.lhs).cols();
  }
  return info;
}

}  // namespace

std::vector<Matrix> Tape::reverse(NodeId output, std::span<const NodeId> wrt) const {
  if (value(output).size() != 1) throw DimensionError("reverse: output is not 1x1");
  ++tls_sweeps;
  std::vector<std::optional<Matrix>> adj(output.index + 1);
  adj[output.index] = Matrix::Ones(1, 1);
  NumericBackend backend{*this};

  for (std::uint32_t i = output.index + 1; i-- > 0;) {
    if (!adj[i] || !nodes_[i].requires_grad || nodes_[i].op == Op::kParameter) {
      continue;
    }
    const NodeInfo info = info_of(*this, i);
    const Matrix g = std::move(*adj[i]);
    adj[i].reset();
    auto acc = [&](NodeId target, auto&& contribution) {
      if (!nodes_[target.index].requires_grad) return;
      Matrix c;
      if constexpr (std::is_invocable_v<decltype(contribution)>) {
        c = contribution();
      } else {
        c = contribution;
      }
      auto& slot = adj[target.index];
      if (slot) {
        *slot += c;
      } else {
        slot = std::move(c);
      }
    };
    apply_rule(backend, *this, info, g, acc);
  }

  std::vector<Matrix> out;
  out.reserve(wrt.size());
  for (NodeId id : wrt) {
    if (id.index <= output.index && adj[id.index]) {
      if (!adj[id.index]->allFinite()) {
        throw NonFiniteError("non-finite adjoint at tape node " +
                                 std::to_string(id.index),
                             id.index);
      }
      out.push_back(*adj[id.index]);
    } else {
      out.push_back(Matrix::Zero(value(id).rows(), value(id).cols()));
    }
  }
  return out;
}

std::vector<std::optional<NodeId>> Tape::reverse_recorded(
    NodeId output, std::span<const NodeId> wrt) {
  if (value(output).size() != 1) throw DimensionError("reverse: output is not 1x1");
  ++tls_sweeps;
  std::vector<std::optional<NodeId>> adj(output.index + 1);
  adj[output.index] = constant(Matrix::Ones(1, 1));
  RecordingBackend backend{*this};

  for (std::uint32_t i = output.index + 1; i-- > 0;) {
    if (!adj[i] || !nodes_[i].requires_grad || nodes_[i].op == Op::kParameter) {
      continue;
    }
    const NodeInfo info = info_of(*this, i);
    const NodeId g = *adj[i];
    auto acc = [&](NodeId target, auto&& contribution) {
      if (!nodes_[target.index].requires_grad) return;
      NodeId c;
      if constexpr (std::is_invocable_v<decltype(contribution)>) {
        c = contribution();
      } else {
        c = contribution;
      }
      auto& slot = adj[target.index];
      slot = slot ? add(*slot, c) : c;
    };
    apply_rule(backend, *this, info, g, acc);
  }

  std::vector<std::optional<NodeId>> out;
  out.reserve(wrt.size());
  for (NodeId id : wrt) {
    out.push_back(id.index <= output.index ? adj[id.index] : std::nullopt);
  }
  return out;
}

std::uint64_t reverse_sweep_count() { return tls_sweeps; }

std::vector<ParameterBlock> bind_parameters(
    Tape& tape, const WeightVector& weights,
    std::span<const std::pair<Eigen::Index, Eigen::Index>> shapes) {
  std::vector<ParameterBlock> blocks;
  blocks.reserve(shapes.size());
  std::size_t offset = 0;
  for (auto [rows, cols] : shapes) {
    const auto count = static_cast<std::size_t>(rows * cols);
    if (offset + count > static_cast<std::size_t>(weights.size())) {
      throw DimensionError("bind_parameters: weight vector too short");
    }
    Matrix block = Eigen::Map<const Matrix>(weights.data() + offset, rows, cols);
    blocks.push_back({tape.parameter(std::move(block)), offset, rows, cols});
    offset += count;
  }
  if (offset != static_cast<std::size_t>(weights.size())) {
    throw DimensionError("bind_parameters: weight vector has " +
                         std::to_string(weights.size()) + " entries, blocks cover " +
                         std::to_string(offset));
  }
  return blocks;
}

ForwardPass record_forward(const Objective& objective, const WeightVector& weights) {
  if (static_cast<std::size_t>(weights.size()) != objective.dimension()) {
    throw DimensionError("weight vector has " + std::to_string(weights.size()) +
                         " entries, objective expects " +
                         std::to_string(objective.dimension()));
  }
  ForwardPass pass;
  pass.recording = objective.record(pass.tape, weights);
  pass.loss = pass.tape.scalar(pass.recording.loss);
  return pass;
}

namespace {

std::vector<NodeId> param_nodes(const Recording& rec) {
  std::vector<NodeId> ids;
  ids.reserve(rec.params.size());
  for (const auto& p : rec.params) ids.push_back(p.node);
  return ids;
}

std::size_t covered(const Recording& rec) {
  std::size_t n = 0;
  for (const auto& p : rec.params) n += static_cast<std::size_t>(p.rows * p.cols);
  return n;
}

}  // namespace

GradVector gradient(const ForwardPass& pass) {
  const auto ids = param_nodes(pass.recording);
  const auto adjoints = pass.tape.reverse(pass.recording.loss, ids);
  GradVector g = GradVector::Zero(static_cast<Eigen::Index>(covered(pass.recording)));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& blk = pass.recording.params[i];
    g.segment(static_cast<Eigen::Index>(blk.offset), blk.rows * blk.cols) =
        adjoints[i].reshaped();
  }
  return g;
}

ValueAndGradient value_and_gradient(const Objective& objective,
                                    const WeightVector& weights) {
  const ForwardPass pass = record_forward(objective, weights);
  return {pass.loss, gradient(pass)};
}

GradVector hvp(const Objective& objective, const WeightVector& weights,
               const Vector& direction) {
  if (direction.size() != weights.size()) {
    throw DimensionError("hvp: direction has " + std::to_string(direction.size()) +
                         " entries, weights have " + std::to_string(weights.size()));
  }
  if (!direction.allFinite()) {
    throw NonFiniteError("hvp: direction is not finite", 0);
  }
  ForwardPass pass = record_forward(objective, weights);
  Tape& tape = pass.tape;
  const auto ids = param_nodes(pass.recording);

  // Sweep 1: recorded gradient.
  const auto grads = tape.reverse_recorded(pass.recording.loss, ids);

  // grad . s
  std::optional<NodeId> inner;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!grads[i]) continue;
    const auto& blk = pass.recording.params[i];
    Matrix s_block = Eigen::Map<const Matrix>(
        direction.data() + blk.offset, blk.rows, blk.cols);
    const NodeId term = tape.dot(*grads[i], tape.constant(std::move(s_block)));
    inner = inner ? tape.add(*inner, term) : term;
  }
  if (!inner) inner = tape.constant(Matrix::Zero(1, 1));

  // Sweep 2: gradient of the directional derivative.
  const auto second = tape.reverse(*inner, ids);
  GradVector hs = GradVector::Zero(weights.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& blk = pass.recording.params[i];
    hs.segment(static_cast<Eigen::Index>(blk.offset), blk.rows * blk.cols) =
        second[i].reshaped();
  }
  return hs;
}

namespace testing {
void set_corrupt_adjoint(bool enabled) { g_corrupt_adjoint = enabled; }
bool corrupt_adjoint() { return g_corrupt_adjoint; }
}  // namespace testing

}  // namespace nforge::autodiff
