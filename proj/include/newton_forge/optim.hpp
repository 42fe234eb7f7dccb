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

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>

#include "newton_forge/autodiff.hpp"
#include "newton_forge/linsolve.hpp"
#include "newton_forge/network.hpp"

namespace nforge {

struct NewtonCGConfig {
  double learning_rate = 0.01;  // fixed step size alpha
  double tau = 1.0;             // Tikhonov damping, also the feasibility threshold
  double cg_tol = 1e-4;         // relative to |grad|
  std::size_t max_iter = 20;
  void validate() const;
};

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double delta = 1e-8;
  void validate() const;
};

struct AdamState {
  Vector s;  // first moment
  Vector r;  // second raw moment
  std::uint64_t k = 0;
  static AdamState zeros(std::size_t n);
};

struct StepReport {
  double loss_before = 0.0;
  double grad_norm = 0.0;
  std::size_t cg_iterations = 0;
  std::optional<CGTermination> cg_termination;  // empty for first-order steps
  bool fallback_used = false;
  double direction_dot_grad = 0.0;
  std::uint64_t reverse_sweeps = 0;
};

/// W - lr * grad.
WeightVector sgd_step(const WeightVector& weights, const GradVector& grad, double lr);

/// One bias-corrected Adam update with the denominator delta + sqrt(r_hat).
/// Advances `state` in place and returns the new weights.
WeightVector adam_step(AdamState& state, const AdamConfig& config,
                       const WeightVector& weights, const GradVector& grad);

/// -g when g'p > tau, otherwise p.
Vector feasibility_check(const Vector& g, const Vector& p, double tau);

struct NewtonStep {
  WeightVector weights;
  Vector direction;  // p after the feasibility check, before scaling by alpha
  StepReport report;
};

/// Regularized Newton step: solve (H + tau I) p = -g by CG on Hessian-vector
/// products of the same batch, guard p with the feasibility check, and move
/// by learning_rate * p.
NewtonStep newton_cg_step(const autodiff::Objective& objective, const WeightVector& weights,
                          const NewtonCGConfig& config);
NewtonStep newton_cg_step(const Network& network, const WeightVector& weights,
                          const Batch& batch, const NewtonCGConfig& config);

struct StepOutcome {
  Vector update;  // W' = W + update
  StepReport report;
};

/// Uniform stepping interface. One instance per worker; mutable state (Adam
/// moments) lives in the instance.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual std::string_view name() const = 0;
  virtual StepOutcome compute_update(const autodiff::Objective& objective,
                                     const WeightVector& weights) = 0;
  virtual std::unique_ptr<Optimizer> clone() const = 0;
  /// Replaces this optimizer's state with the running mean of the workers'
  /// states after a data-parallel step. Stateless optimizers ignore it.
  virtual void merge_from(std::span<const Optimizer* const> workers) { (void)workers; }

  WeightVector step(const autodiff::Objective& objective, const WeightVector& weights,
                    StepReport* report = nullptr);
};

class SgdOptimizer final : public Optimizer {
 public:
  explicit SgdOptimizer(double learning_rate);
  std::string_view name() const override { return "sgd"; }
  StepOutcome compute_update(const autodiff::Objective& objective,
                             const WeightVector& weights) override;
  std::unique_ptr<Optimizer> clone() const override;
  double learning_rate() const { return lr_; }

 private:
  double lr_;
};

class AdamOptimizer final : public Optimizer {
 public:
  explicit AdamOptimizer(AdamConfig config);
  std::string_view name() const override { return "adam"; }
  StepOutcome compute_update(const autodiff::Objective& objective,
                             const WeightVector& weights) override;
  std::unique_ptr<Optimizer> clone() const override;
  void merge_from(std::span<const Optimizer* const> workers) override;
  const AdamState& state() const { return state_; }

 private:
  AdamConfig config_;
  AdamState state_;
};

class NewtonCGOptimizer final : public Optimizer {
 public:
  explicit NewtonCGOptimizer(NewtonCGConfig config);
  std::string_view name() const override { return "newton_cg"; }
  StepOutcome compute_update(const autodiff::Objective& objective,
                             const WeightVector& weights) override;
  std::unique_ptr<Optimizer> clone() const override;
  const NewtonCGConfig& config() const { return config_; }

 private:
  NewtonCGConfig config_;
};

}  // namespace nforge
