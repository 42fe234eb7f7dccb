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

#include "newton_forge/optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "newton_forge/error.hpp"

namespace nforge {

void NewtonCGConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("newton_cg: learning_rate must be finite and > 0");
  }
  if (!(tau >= 0.0) || !std::isfinite(tau)) {
    throw ConfigError("newton_cg: tau must be finite and >= 0");
  }
  if (!(cg_tol > 0.0) || !std::isfinite(cg_tol)) {
    throw ConfigError("newton_cg: cg_tol must be finite and > 0");
  }
  if (max_iter < 1) throw ConfigError("newton_cg: max_iter must be >= 1");
}

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("adam: learning_rate must be finite and > 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam: beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam: beta2 must be in [0, 1)");
  if (!(delta > 0.0) || !std::isfinite(delta)) throw ConfigError("adam: delta must be > 0");
}

AdamState AdamState::zeros(std::size_t n) {
  const auto size = static_cast<Eigen::Index>(n);
  return {Vector::Zero(size), Vector::Zero(size), 0};
}

WeightVector sgd_step(const WeightVector& weights, const GradVector& grad, double lr) {
  if (weights.size() != grad.size()) throw DimensionError("sgd_step: length mismatch");
  return weights - lr * grad;
}

namespace {

Vector adam_update(AdamState& state, const AdamConfig& config, const GradVector& grad) {
  if (state.s.size() != grad.size() || state.r.size() != grad.size()) {
    throw DimensionError("adam_step: state and gradient lengths differ");
  }
  state.k += 1;
  state.s = config.beta1 * state.s + (1.0 - config.beta1) * grad;
  state.r = config.beta2 * state.r + (1.0 - config.beta2) * grad.cwiseProduct(grad);
  const double k = static_cast<double>(state.k);
  const Vector s_hat = state.s / (1.0 - std::pow(config.beta1, k));
  const Vector r_hat = state.r / (1.0 - std::pow(config.beta2, k));
  return -config.learning_rate *
         s_hat.cwiseQuotient((config.delta + r_hat.array().sqrt()).matrix());
}

}  // namespace

WeightVector adam_step(AdamState& state, const AdamConfig& config,
                       const WeightVector& weights, const GradVector& grad) {
  if (weights.size() != grad.size()) throw DimensionError("adam_step: length mismatch");
  return weights + adam_update(state, config, grad);
}

Vector feasibility_check(const Vector& g, const Vector& p, double tau) {
  if (g.size() != p.size()) throw DimensionError("feasibility_check: length mismatch");
  if (g.dot(p) > tau) return -g;
  return p;
}

NewtonStep newton_cg_step(const autodiff::Objective& objective, const WeightVector& weights,
                          const NewtonCGConfig& config) {
  config.validate();
  const autodiff::SweepCounter sweeps;
  NewtonStep step;

  const auto [loss, g] = autodiff::value_and_gradient(objective, weights);
  step.report.loss_before = loss;
  step.report.grad_norm = g.norm();

  const MatVec matvec = [&](const Vector& v) -> Vector {
    return autodiff::hvp(objective, weights, v) + config.tau * v;
  };
  CGResult cg;
  try {
    cg = cg_solve(matvec, -g, config.cg_tol, config.max_iter);
  } catch (const NonFiniteError& e) {
    throw NonFiniteError(std::string("newton_cg_step: ") + e.what(), e.where());
  }

  step.direction = feasibility_check(g, cg.solution, config.tau);
  step.report.fallback_used = g.dot(cg.solution) > config.tau;
  step.report.cg_iterations = cg.iterations;
  step.report.cg_termination = cg.termination;
  step.report.direction_dot_grad = g.dot(step.direction);
  step.weights = weights + config.learning_rate * step.direction;
  step.report.reverse_sweeps = sweeps.count();
  return step;
}

NewtonStep newton_cg_step(const Network& network, const WeightVector& weights,
                          const Batch& batch, const NewtonCGConfig& config) {
  const NetworkObjective objective(network, batch);
  return newton_cg_step(objective, weights, config);
}

WeightVector Optimizer::step(const autodiff::Objective& objective,
                             const WeightVector& weights, StepReport* report) {
  StepOutcome outcome = compute_update(objective, weights);
  if (report) *report = outcome.report;
  return weights + outcome.update;
}

SgdOptimizer::SgdOptimizer(double learning_rate) : lr_(learning_rate) {
  if (!(lr_ > 0.0) || !std::isfinite(lr_)) {
    throw ConfigError("sgd: learning_rate must be finite and > 0");
  }
}

StepOutcome SgdOptimizer::compute_update(const autodiff::Objective& objective,
                                         const WeightVector& weights) {
  const autodiff::SweepCounter sweeps;
  const auto [loss, g] = autodiff::value_and_gradient(objective, weights);
  StepOutcome out;
  out.update = -lr_ * g;
  out.report.loss_before = loss;
  out.report.grad_norm = g.norm();
  out.report.direction_dot_grad = -g.squaredNorm();
  out.report.reverse_sweeps = sweeps.count();
  return out;
}

std::unique_ptr<Optimizer> SgdOptimizer::clone() const {
  return std::make_unique<SgdOptimizer>(*this);
}

AdamOptimizer::AdamOptimizer(AdamConfig config) : config_(config) { config_.validate(); }

StepOutcome AdamOptimizer::compute_update(const autodiff::Objective& objective,
                                          const WeightVector& weights) {
  const autodiff::SweepCounter sweeps;
  if (state_.s.size() == 0) state_ = AdamState::zeros(objective.dimension());
  const auto [loss, g] = autodiff::value_and_gradient(objective, weights);
  StepOutcome out;
  out.update = adam_update(state_, config_, g);
  out.report.loss_before = loss;
  out.report.grad_norm = g.norm();
  out.report.direction_dot_grad = g.dot(out.update);
  out.report.reverse_sweeps = sweeps.count();
  return out;
}

std::unique_ptr<Optimizer> AdamOptimizer::clone() const {
  return std::make_unique<AdamOptimizer>(*this);
}

void AdamOptimizer::merge_from(std::span<const Optimizer* const> workers) {
  if (workers.empty()) return;
  // Running mean keeps k identical states bitwise identical to one of them.
  AdamState merged;
  std::size_t seen = 0;
  for (const Optimizer* w : workers) {
    const auto* adam = dynamic_cast<const AdamOptimizer*>(w);
    if (adam == nullptr) throw Error("adam: cannot merge state from a different optimizer");
    const AdamState& st = adam->state_;
    ++seen;
    if (seen == 1) {
      merged = st;
      continue;
    }
    const double inv = 1.0 / static_cast<double>(seen);
    merged.s += (st.s - merged.s) * inv;
    merged.r += (st.r - merged.r) * inv;
    merged.k = std::max(merged.k, st.k);
  }
  state_ = std::move(merged);
}

NewtonCGOptimizer::NewtonCGOptimizer(NewtonCGConfig config) : config_(config) {
  config_.validate();
}

StepOutcome NewtonCGOptimizer::compute_update(const autodiff::Objective& objective,
                                              const WeightVector& weights) {
  NewtonStep step = newton_cg_step(objective, weights, config_);
  return {config_.learning_rate * step.direction, step.report};
}

std::unique_ptr<Optimizer> NewtonCGOptimizer::clone() const {
  return std::make_unique<NewtonCGOptimizer>(*this);
}

}  // namespace nforge
