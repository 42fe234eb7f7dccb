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


#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "newton_forge/data.hpp"
#include "newton_forge/network.hpp"
#include "newton_forge/optim.hpp"
#include "newton_forge/parallel.hpp"

namespace nforge {

enum class DatasetKind { kSyntheticRegression, kSyntheticClassification, kCsv, kIdx };
enum class OptimizerKind { kNewtonCG, kSgd, kAdam };

std::string_view to_string(DatasetKind k);
std::string_view to_string(OptimizerKind k);

// Everything a run needs. Paths are already resolved against the directory
// that holds the config file.
struct RunConfig {
  std::string scenario = "unnamed";

  DatasetKind dataset = DatasetKind::kSyntheticRegression;
  std::size_t synth_samples = 1000;
  std::size_t synth_features = 13;
  std::size_t synth_classes = 3;
  double synth_noise = 0.0;
  std::uint64_t synth_seed = 0;
  std::string csv_path;
  std::vector<std::string> csv_targets;
  bool standardize = true;
  std::string idx_images;
  std::string idx_labels;
  std::optional<std::size_t> idx_limit;
  double validation_fraction = 0.1;

  std::string arch;  // e.g. 13:8tanh:1identity:sse
  OptimizerKind optimizer = OptimizerKind::kNewtonCG;
  NewtonCGConfig newton;
  AdamConfig adam;
  double sgd_learning_rate = 0.01;

  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  std::size_t workers = 1;
  Reduction reduction = Reduction::kMean;
  std::uint64_t seed_init = 1;
  std::uint64_t seed_shuffle = 2;
  bool shuffle = true;
  std::string out_dir = "out";
  std::vector<std::size_t> worker_counts{1};
  bool timing = false;  // record wall_ms; off keeps metrics.csv reproducible

  double learning_rate() const;
  std::unique_ptr<Optimizer> make_optimizer() const;
  Network network() const;
};

// Parses `key = value` lines. `#` starts a comment. Unknown keys, repeated
// keys and hyperparameters of a different optimizer are ConfigErrors that
// name the line. Relative paths resolve against base_dir.
RunConfig parse_config(std::istream& in, const std::string& base_dir = ".");
RunConfig load_config(const std::string& path);

// Checks ranges and that referenced files exist. Throws ConfigError.
void validate(const RunConfig& config);

// Materializes the configured dataset.
Dataset load_dataset(const RunConfig& config);

}  // namespace nforge
