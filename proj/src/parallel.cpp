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

#include "newton_forge/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

#include "newton_forge/error.hpp"

namespace nforge {

std::string_view to_string(Reduction r) { return r == Reduction::kMean ? "mean" : "sum"; }

Reduction parse_reduction(std::string_view s) {
  if (s == "mean") return Reduction::kMean;
  if (s == "sum") return Reduction::kSum;
  throw ConfigError("unknown reduction '" + std::string(s) + "' (expected mean or sum)");
}

void ParallelPlan::validate() const {
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (per_worker_batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

std::uint64_t hash_weights(const WeightVector& weights) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(weights.data());
  const std::size_t len = static_cast<std::size_t>(weights.size()) * sizeof(double);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

ParallelResult parallel_step(const Network& network, const WeightVector& weights,
                             std::span<const Batch> batches, Optimizer& optimizer,
                             Reduction reduction) {
  const std::size_t k = batches.size();
  if (k == 0) throw Error("parallel_step: no batches");

  ParallelResult result;
  result.snapshot_hash = hash_weights(weights);
  result.workers.resize(k);

  std::vector<std::unique_ptr<Optimizer>> clones;
  clones.reserve(k);
  for (std::size_t i = 0; i < k; ++i) clones.push_back(optimizer.clone());
  std::vector<StepOutcome> outcomes(k);
  std::vector<std::exception_ptr> failures(k);

  auto work = [&](std::size_t i) {
    try {
      const WeightVector snapshot = weights;  // private copy per worker
      result.workers[i].snapshot_hash = hash_weights(snapshot);
      const NetworkObjective objective(network, batches[i]);
      outcomes[i] = clones[i]->compute_update(objective, snapshot);
      result.workers[i].step = outcomes[i].report;
    } catch (...) {
      failures[i] = std::current_exception();
    }
  };

  if (k == 1) {
    work(0);
  } else {
    std::vector<std::jthread> threads;
    threads.reserve(k);
    for (std::size_t i = 0; i < k; ++i) threads.emplace_back(work, i);
  }

  for (std::size_t i = 0; i < k; ++i) {
    if (!failures[i]) continue;
    const std::string prefix = "parallel_step: worker " + std::to_string(i) + " failed: ";
    try {
      std::rethrow_exception(failures[i]);
    } catch (const NonFiniteError& e) {
      throw NonFiniteError(prefix + e.what(), i);
    } catch (const std::exception& e) {
      throw Error(prefix + e.what());
    }
  }

  // Fixed worker order. The mean is a running mean so that k equal updates
  // reduce to exactly that update.
  Vector update = outcomes[0].update;
  for (std::size_t i = 1; i < k; ++i) {
    if (reduction == Reduction::kSum) {
      update += outcomes[i].update;
    } else {
      update += (outcomes[i].update - update) / static_cast<double>(i + 1);
    }
  }
  result.weights = weights + update;

  std::vector<const Optimizer*> views;
  views.reserve(k);
  for (const auto& c : clones) views.push_back(c.get());
  optimizer.merge_from(views);
  return result;
}

std::vector<ScalingRecord> scaling_records(std::span<const std::size_t> workers,
                                           std::span<const double> wall_seconds) {
  if (workers.size() != wall_seconds.size()) {
    throw Error("scaling_records: worker and timing lists differ in length");
  }
  double t1 = -1.0;
  for (std::size_t i = 0; i < workers.size(); ++i) {
    if (workers[i] == 1) t1 = wall_seconds[i];
  }
  if (t1 < 0.0) throw Error("scaling_records: worker counts must include 1");
  std::vector<ScalingRecord> out;
  for (std::size_t i = 0; i < workers.size(); ++i) {
    ScalingRecord rec;
    rec.workers = workers[i];
    rec.wall_seconds = wall_seconds[i];
    rec.parallel_efficiency =
        workers[i] == 1 ? 1.0
                        : t1 / (static_cast<double>(workers[i]) * wall_seconds[i]);
    out.push_back(rec);
  }
  return out;
}

std::string format_efficiency(double efficiency) {
  if (efficiency == 1.0) return "100%";
  const double tenths = std::floor(efficiency * 1000.0 * (1.0 + 1e-12));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", tenths / 10.0);
  return buf;
}

namespace {

std::string format_runtime(double seconds) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", seconds);
  std::string s = buf;
  while (!s.empty() && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s + "s";
}

}  // namespace

std::string format_scaling_table(std::span<const ScalingRecord> records) {
  std::vector<std::string> head{""}, runtime{"runtime"}, eff{"parallel efficiency"};
  for (const auto& r : records) {
    head.push_back(std::to_string(r.workers) + (r.workers == 1 ? " worker" : " workers"));
    runtime.push_back(format_runtime(r.wall_seconds));
    eff.push_back(format_efficiency(r.parallel_efficiency));
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto* row : {&head, &runtime, &eff}) {
    for (std::size_t c = 0; c < row->size(); ++c) width[c] = std::max(width[c], (*row)[c].size());
  }
  std::ostringstream out;
  for (const auto* row : {&head, &runtime, &eff}) {
    for (std::size_t c = 0; c < row->size(); ++c) {
      if (c > 0) out << " | ";
      out << std::left << std::setw(static_cast<int>(width[c])) << (*row)[c];
    }
    out << '\n';
  }
  return out.str();
}

void write_scaling_csv(std::ostream& out, std::span<const ScalingRecord> records) {
  out << "workers,wall_seconds,parallel_efficiency\n";
  for (const auto& r : records) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f\n", r.workers, r.wall_seconds,
                  r.parallel_efficiency);
    out << buf;
  }
}

ScalingReport run_scaling_benchmark(const Network& network, const Dataset& dataset,
                                    const Optimizer& prototype,
                                    std::span<const std::size_t> worker_counts,
                                    const BenchmarkSettings& settings) {
  if (std::find(worker_counts.begin(), worker_counts.end(), std::size_t{1}) ==
      worker_counts.end()) {
    throw ConfigError("benchmark: worker_counts must include 1");
  }
  ScalingReport report;
  const unsigned cores = std::thread::hardware_concurrency();
  const WeightVector initial = init_weights(network, settings.init_seed);
  const auto batches = epoch_batches(dataset, settings.per_worker_batch_size, 0,
                                     settings.shuffle_seed, settings.shuffle);
  std::vector<double> seconds;
  for (std::size_t k : worker_counts) {
    if (k < 1) throw ConfigError("benchmark: worker counts must be >= 1");
    if (cores != 0 && k > cores) {
      report.warnings.push_back("worker count " + std::to_string(k) + " exceeds the " +
                                std::to_string(cores) + " hardware threads of this host");
    }
    WeightVector w = initial;
    auto opt = prototype.clone();
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < batches.size(); i += k) {
      const std::size_t count = std::min(k, batches.size() - i);
      w = parallel_step(network, w, std::span(batches).subspan(i, count), *opt,
                        settings.reduction)
              .weights;
    }
    const auto stop = std::chrono::steady_clock::now();
    seconds.push_back(std::chrono::duration<double>(stop - start).count());
  }
  report.records = scaling_records(worker_counts, seconds);
  return report;
}

}  // namespace nforge
