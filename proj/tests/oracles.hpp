#pragma once

// Test-only reference computations. Nothing here goes through the tape:
// forward passes are written as plain loops so they check the engine rather
// than reuse it.

#include <cmath>
#include <cstdint>
#include <vector>

#include "newton_forge/autodiff.hpp"
#include "newton_forge/network.hpp"
#include "newton_forge/random.hpp"

namespace oracle {

using nforge::Activation;
using nforge::Batch;
using nforge::LossKind;
using nforge::Matrix;
using nforge::Network;
using nforge::Vector;

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::kIdentity: return z;
    case Activation::kRelu: return z > 0.0 ? z : 0.0;
    case Activation::kTanh: return std::tanh(z);
    case Activation::kSigmoid: return 1.0 / (1.0 + std::exp(-z));
    case Activation::kSoftmax: return z;  // handled row-wise by the caller
  }
  return z;
}

// Straight-line loss: explicit loops, neuron-major flat weights with each
// neuron's bias after its incoming weights.
inline double loss(const Network& net, const Vector& w, const Batch& batch) {
  double total = 0.0;
  for (Eigen::Index row = 0; row < batch.features.rows(); ++row) {
    std::vector<double> act(static_cast<std::size_t>(batch.features.cols()));
    for (std::size_t i = 0; i < act.size(); ++i) act[i] = batch.features(row, static_cast<Eigen::Index>(i));
    std::size_t offset = 0;
    std::vector<double> logits;
    for (std::size_t d = 0; d < net.layers().size(); ++d) {
      const auto& layer = net.layers()[d];
      std::vector<double> next(layer.width);
      for (std::size_t j = 0; j < layer.width; ++j) {
        double z = 0.0;
        for (std::size_t i = 0; i < act.size(); ++i) z += w[static_cast<Eigen::Index>(offset + i)] * act[i];
        z += w[static_cast<Eigen::Index>(offset + act.size())];
        offset += act.size() + 1;
        next[j] = z;
      }
      if (layer.activation == Activation::kSoftmax) {
        logits = next;
        double mx = next[0];
        for (double v : next) mx = std::max(mx, v);
        double s = 0.0;
        for (double& v : next) s += (v = std::exp(v - mx));
        for (double& v : next) v /= s;
      } else {
        for (double& v : next) v = activate(layer.activation, v);
      }
      act = std::move(next);
    }
    for (std::size_t j = 0; j < act.size(); ++j) {
      const double y = batch.targets(row, static_cast<Eigen::Index>(j));
      if (net.loss() == LossKind::kSumSquaredError) {
        total += (y - act[j]) * (y - act[j]);
      } else {
        total -= y * std::log(std::max(act[j], 1e-12));
      }
    }
  }
  return total;
}

template <class F>
Vector fd_gradient(F&& f, const Vector& w, double h = 1e-5) {
  Vector g(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    Vector wp = w, wm = w;
    wp[i] += h;
    wm[i] -= h;
    g[i] = (f(wp) - f(wm)) / (2.0 * h);
  }
  return g;
}

// (grad L(w + h s) - grad L(w - h s)) / 2h with grad taken from the engine's
// first-order path.
inline Vector fd_hvp(const nforge::autodiff::Objective& obj, const Vector& w,
                     const Vector& s, double h = 1e-5) {
  const Vector gp = nforge::autodiff::value_and_gradient(obj, w + h * s).gradient;
  const Vector gm = nforge::autodiff::value_and_gradient(obj, w - h * s).gradient;
  return (gp - gm) / (2.0 * h);
}

// 0.5 w' A w + c' w as a tape objective.
class Quadratic final : public nforge::autodiff::Objective {
 public:
  explicit Quadratic(Matrix a, Vector c = {}) : a_(std::move(a)), c_(std::move(c)) {
    if (c_.size() == 0) c_ = Vector::Zero(a_.rows());
  }
  std::size_t dimension() const override { return static_cast<std::size_t>(a_.rows()); }
  nforge::autodiff::Recording record(nforge::autodiff::Tape& tape,
                                     const Vector& weights) const override {
    const std::pair<Eigen::Index, Eigen::Index> shape{a_.rows(), 1};
    nforge::autodiff::Recording rec;
    rec.params = nforge::autodiff::bind_parameters(tape, weights, std::span(&shape, 1));
    const auto w = rec.params[0].node;
    const auto aw = tape.matmul(tape.constant(a_), w);
    const auto quad = tape.scale(tape.dot(w, aw), 0.5);
    rec.loss = tape.add(quad, tape.dot(tape.constant(c_), w));
    return rec;
  }
  const Matrix& matrix() const { return a_; }
  Vector minimizer() const { return a_.ldlt().solve(-c_); }

 private:
  Matrix a_;
  Vector c_;
};

inline Matrix random_matrix(nforge::Rng& rng, Eigen::Index r, Eigen::Index c,
                            double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng.uniform(lo, hi);
  return m;
}

inline Vector random_vector(nforge::Rng& rng, Eigen::Index n) {
  Vector v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// Random batch matching the network's shapes; one-hot targets for
// cross-entropy networks.
inline Batch random_batch(nforge::Rng& rng, const Network& net, Eigen::Index rows) {
  Batch b{random_matrix(rng, rows, static_cast<Eigen::Index>(net.input_dim())),
          Matrix::Zero(rows, static_cast<Eigen::Index>(net.output_dim()))};
  if (net.loss() == LossKind::kCrossEntropy) {
    for (Eigen::Index i = 0; i < rows; ++i)
      b.targets(i, static_cast<Eigen::Index>(rng.below(net.output_dim()))) = 1.0;
  } else {
    b.targets = random_matrix(rng, rows, static_cast<Eigen::Index>(net.output_dim()));
  }
  return b;
}

inline Vector random_weights(nforge::Rng& rng, const Network& net, double scale = 1.0) {
  return scale * random_vector(rng, static_cast<Eigen::Index>(net.weight_count()));
}

inline double rel_norm(const Vector& got, const Vector& want) {
  const double denom = std::max(want.norm(), 1e-300);
  return (got - want).norm() / denom;
}

}  // namespace oracle
