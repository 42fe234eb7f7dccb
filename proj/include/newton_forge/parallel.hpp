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

// Data-parallel stepping: k workers each compute an update from the same
// weight snapshot on their own mini-batch; the updates are reduced in worker
// order and applied once.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "newton_forge/data.hpp"
#include "newton_forge/network.hpp"
#include "newton_forge/optim.hpp"

namespace nforge {

enum class Reduction { kMean, kSum };

std::string_view to_string(Reduction r);
Reduction parse_reduction(std::string_view s);

struct ParallelPlan {
  std::size_t workers = 1;
  Reduction reduction = Reduction::kMean;
  std::size_t per_worker_batch_size = 32;
  void validate() const;
};

struct WorkerReport {
  StepReport step;
  std::uint64_t snapshot_hash = 0;  // hash of the weights the worker read
};

struct ParallelResult {
  WeightVector weights;
  std::vector<WorkerReport> workers;
  std::uint64_t snapshot_hash = 0;  // hash of the pre-step weights
};

/// FNV-1a over the raw bytes of the vector.
std::uint64_t hash_weights(const WeightVector& weights);

/// Runs one data-parallel step over `batches` (one per worker; the plan's
/// worker count is ignored in favour of batches.size()). `optimizer` is the
/// coordinator's instance: workers run on clones and its state is replaced by
/// the merged worker state afterwards. A single batch runs on the calling
/// thread. Any worker failure aborts the step with an Error naming the worker.
ParallelResult parallel_step(const Network& network, const WeightVector& weights,
                             std::span<const Batch> batches, Optimizer& optimizer,
                             Reduction reduction = Reduction::kMean);

struct ScalingRecord {
  std::size_t workers = 1;
  double wall_seconds = 0.0;
  double parallel_efficiency = 1.0;
};

/// efficiency(k) = t(1) / (k * t(k)). `workers` must contain 1.
std::vector<ScalingRecord> scaling_records(std::span<const std::size_t> workers,
                                           std::span<const double> wall_seconds);

/// Percent with one decimal, truncated toward zero; "100%" for exactly 1.
std::string format_efficiency(double efficiency);

/// Two-row table (runtime, parallel efficiency) with one column per worker count.
std::string format_scaling_table(std::span<const ScalingRecord> records);

/// CSV with header `workers,wall_seconds,parallel_efficiency`.
void write_scaling_csv(std::ostream& out, std::span<const ScalingRecord> records);

struct ScalingReport {
  std::vector<ScalingRecord> records;
  std::vector<std::string> warnings;
};

struct BenchmarkSettings {
  std::size_t per_worker_batch_size = 32;
  Reduction reduction = Reduction::kMean;
  std::uint64_t init_seed = 1;
  std::uint64_t shuffle_seed = 2;
  bool shuffle = true;
};

/// Times one epoch of data-parallel training for each worker count, starting
/// from the same initial weights each time. Worker counts above the host's
/// hardware concurrency are run anyway and recorded as warnings.
ScalingReport run_scaling_benchmark(const Network& network, const Dataset& dataset,
                                    const Optimizer& prototype,
                                    std::span<const std::size_t> worker_counts,
                                    const BenchmarkSettings& settings);

}  // namespace nforge
