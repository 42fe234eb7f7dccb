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

#include "newton_forge/linsolve.hpp"

#include <cmath>
#include <string>

#include "newton_forge/error.hpp"

namespace nforge {

std::string_view to_string(CGTermination t) {
  switch (t) {
    case CGTermination::kToleranceMet: return "tolerance_met";
    case CGTermination::kMaxIterations: return "max_iterations";
    case CGTermination::kNegativeCurvature: return "negative_curvature";
    case CGTermination::kZeroRhs: return "zero_rhs";
  }
  return "?";
}

CGResult cg_solve(const MatVec& matvec, const Vector& b, double tol, std::size_t max_iter) {
  if (!(tol > 0.0) || !std::isfinite(tol)) throw Error("cg_solve: tol must be > 0");
  if (max_iter < 1) throw Error("cg_solve: max_iter must be >= 1");
  if (!b.allFinite()) throw NonFiniteError("cg_solve: right-hand side is not finite", 0);

  CGResult result;
  result.solution = Vector::Zero(b.size());
  const double b_norm = b.norm();
  if (b_norm == 0.0) {
    result.termination = CGTermination::kZeroRhs;
    return result;
  }

  Vector& x = result.solution;
  Vector r = b;
  Vector d = r;
  double rr = r.squaredNorm();
  const double target = tol * b_norm;

  for (std::size_t k = 1; k <= max_iter; ++k) {
    const Vector ad = matvec(d);
    result.iterations = k;
    if (ad.size() != d.size()) {
      throw DimensionError("cg_solve: matvec returned " + std::to_string(ad.size()) +
                           " entries, expected " + std::to_string(d.size()));
    }
    if (!ad.allFinite()) {
      throw NonFiniteError("cg_solve: non-finite matvec result at iteration " +
                               std::to_string(k),
                           k);
    }
    const double curvature = d.dot(ad);
    if (curvature <= kCurvatureFloor * d.squaredNorm()) {
      // Truncated-Newton convention: hand back the current iterate. On the
      // first iteration that iterate is zero and carries no information, so
      // the ascent step along -g is returned instead for the caller's
      // feasibility check to reject.
      if (curvature < 0.0 && k == 1) {
        const double alpha = rr / curvature;
        x += alpha * d;
        r -= alpha * ad;
      }
      result.residual_norm = r.norm();
      result.termination = CGTermination::kNegativeCurvature;
      if (!x.allFinite()) {
        throw NonFiniteError("cg_solve: non-finite iterate at iteration " +
                                 std::to_string(k),
                             k);
      }
      return result;
    }
    const double alpha = rr / curvature;
    x += alpha * d;
    r -= alpha * ad;
    const double rr_next = r.squaredNorm();
    if (!std::isfinite(rr_next) || !x.allFinite()) {
      throw NonFiniteError("cg_solve: non-finite iterate at iteration " +
                               std::to_string(k),
                           k);
    }
    if (std::sqrt(rr_next) <= target) {
      result.residual_norm = std::sqrt(rr_next);
      result.termination = CGTermination::kToleranceMet;
      return result;
    }
    d = r + (rr_next / rr) * d;
    rr = rr_next;
  }
  result.residual_norm = std::sqrt(rr);
  result.termination = CGTermination::kMaxIterations;
  return result;
}

}  // namespace nforge
