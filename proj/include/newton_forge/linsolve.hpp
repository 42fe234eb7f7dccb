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
#include <functional>
#include <string_view>

#include "newton_forge/autodiff.hpp"

namespace nforge {

enum class CGTermination { kToleranceMet, kMaxIterations, kNegativeCurvature, kZeroRhs };

std::string_view to_string(CGTermination t);

struct CGResult {
  Vector solution;
  /// Number of matrix-vector products performed.
  std::size_t iterations = 0;
  double residual_norm = 0.0;
  CGTermination termination = CGTermination::kZeroRhs;
};

using MatVec = std::function<Vector(const Vector&)>;

/// Curvature threshold: a search direction d with d'Ad <= kCurvatureFloor * |d|^2
/// stops the iteration.
inline constexpr double kCurvatureFloor = 1e-12;

/// Matrix-free conjugate gradients for A x = b, starting from x = 0.
///
/// Stops when |r| <= tol * |b|, after max_iter products, or when a direction
/// has non-positive curvature. In the curvature case the CG step along that
/// direction is still taken when d'Ad < 0 (the raw iterate is handed to the
/// caller for its own acceptance test); when 0 <= d'Ad <= floor the iterate
/// before the step is returned. |b| == 0 returns the zero vector.
///
/// Throws NonFiniteError carrying the iteration index when the callback
/// produces NaN or infinity.
CGResult cg_solve(const MatVec& matvec, const Vector& b, double tol, std::size_t max_iter);

}  // namespace nforge
