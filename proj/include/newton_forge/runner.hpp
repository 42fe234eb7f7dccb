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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "newton_forge/config.hpp"

namespace nforge {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitDivergence = 2, kExitCheckFailure = 3 };

// Command-line overrides applied on top of the config file.
struct Overrides {
  std::optional<std::uint64_t> seed_init;
  std::optional<std::uint64_t> seed_shuffle;
  std::optional<std::size_t> workers;
  bool no_shuffle = false;
  std::optional<std::string> out_dir;

  void apply(RunConfig& config) const;
};

struct MetricsRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;                // summed over the step's batches
  std::optional<double> accuracy;   // epoch's last step, classification only
  double grad_norm = 0.0;           // mean over workers
  std::size_t cg_iterations = 0;    // summed over workers
  bool fallback_used = false;       // any worker
  double wall_ms = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "step,epoch,loss,accuracy,grad_norm,cg_iterations,fallback_used,wall_ms";

void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> records);

struct TrainResult {
  Network network;
  WeightVector initial_weights;
  WeightVector weights;
  std::vector<MetricsRecord> metrics;
  double final_loss = 0.0;              // full training split, sum over rows
  std::optional<double> final_accuracy;  // classification only
  std::size_t train_rows = 0;
  // Set when training stopped on a non-finite value; metrics hold the steps
  // completed before it.
  std::optional<std::string> divergence;
};

// Runs the configured epochs in memory. Config errors propagate as
// ConfigError; divergence is reported in the result, not thrown.
TrainResult train(const RunConfig& config, const Dataset& dataset);

struct CheckOptions {
  bool corrupt_adjoint = false;  // negative control for the gradient check
};

struct CheckRow {
  std::string name;
  std::optional<double> value;  // empty when the check does not apply
  double tolerance = 0.0;
  bool passed = true;
};

std::vector<CheckRow> run_checks(const RunConfig& config, const Dataset& dataset,
                                 const CheckOptions& options = {});

int cmd_train(const std::string& config_path, const Overrides& overrides, std::ostream& out,
              std::ostream& err);
int cmd_check(const std::string& config_path, const Overrides& overrides,
              const CheckOptions& options, std::ostream& out, std::ostream& err);
int cmd_benchmark(const std::string& config_path, const Overrides& overrides,
                  std::ostream& out, std::ostream& err);

}  // namespace nforge
