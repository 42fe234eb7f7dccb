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
#include <optional>
#include <string>
#include <vector>

#include "newton_forge/network.hpp"

namespace nforge {

enum class Task { kRegression, kClassification };

/// Per-column affine map x' = (x - mean) / sd applied at load time.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> sd;  // sd < 1e-12 is stored as 1
  Matrix apply(const Matrix& raw) const;
  Matrix invert(const Matrix& standardized) const;
};

struct Dataset {
  Matrix features;  // N x d_in
  Matrix targets;   // N x d_out
  Task task = Task::kRegression;
  std::string name;
  std::optional<Standardization> feature_scaling;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
  /// Rows `indices` as a batch, in the given order.
  Batch gather(const std::vector<std::size_t>& indices) const;
  Batch as_batch() const { return {features, targets}; }
};

/// Comma-separated file with one header row. `target_columns` are header
/// names; every other column is a feature. Standardization applies to the
/// feature columns only.
Dataset load_csv(const std::string& path, const std::vector<std::string>& target_columns,
                 bool standardize);

/// MNIST-style IDX image/label pair, optionally gzip-compressed. Pixels are
/// scaled to [0, 1]; labels become one-hot rows over 10 classes.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::optional<std::size_t> limit = std::nullopt);

/// X ~ U[-1, 1]^d_in, hidden beta ~ N(0, 1), Y = X beta + noise_sd * N(0, 1).
Dataset synth_regression(std::uint64_t seed, std::size_t n, std::size_t d_in,
                         double noise_sd);

/// X ~ U[-1, 1]^d_in; labels drawn from softmax(X B) with a hidden
/// B ~ N(0, scale^2); one-hot over `classes`.
Dataset synth_classification(std::uint64_t seed, std::size_t n, std::size_t d_in,
                             std::size_t classes, double scale = 2.0);

/// Sample order for one epoch: a permutation derived from (base_seed,
/// epoch_index), or the identity when shuffle is false.
std::vector<std::size_t> epoch_order(std::size_t n, std::size_t epoch_index,
                                     std::uint64_t base_seed, bool shuffle = true);

/// Consecutive disjoint slices of the epoch order; the last one may be short.
std::vector<Batch> epoch_batches(const Dataset& dataset, std::size_t batch_size,
                                 std::size_t epoch_index, std::uint64_t base_seed,
                                 bool shuffle = true);

struct Split {
  Dataset train;
  std::optional<Dataset> validation;
};

/// Seeded split; the validation part gets floor(N * fraction) rows and the
/// training part always keeps at least one row.
Split split_dataset(const Dataset& dataset, double validation_fraction, std::uint64_t seed);

}  // namespace nforge
