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


#include "newton_forge/config.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "newton_forge/error.hpp"

namespace nforge {
namespace {

namespace fs = std::filesystem;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

struct Entry {
  std::string value;
  std::size_t line;
};

class Reader {
 public:
  explicit Reader(std::map<std::string, Entry> entries) : entries_(std::move(entries)) {}

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::optional<Entry> take(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    Entry e = it->second;
    entries_.erase(it);
    return e;
  }

  void text(const std::string& key, std::string& out) {
    if (auto e = take(key)) out = e->value;
  }

  template <typename T>
  void number(const std::string& key, T& out) {
    auto e = take(key);
    if (!e) return;
    T v{};
    const char* b = e->value.data();
    const char* end = b + e->value.size();
    auto [ptr, ec] = std::from_chars(b, end, v);
    if (ec != std::errc{} || ptr != end) fail(*e, key, "expected a number");
    if constexpr (std::is_floating_point_v<T>) {
      if (!std::isfinite(v)) fail(*e, key, "must be finite");
    }
    out = v;
  }

  void boolean(const std::string& key, bool& out) {
    auto e = take(key);
    if (!e) return;
    if (e->value == "true" || e->value == "1") {
      out = true;
    } else if (e->value == "false" || e->value == "0") {
      out = false;
    } else {
      fail(*e, key, "expected true or false");
    }
  }

  std::vector<std::string> list(const Entry& e) const {
    std::vector<std::string> items;
    std::stringstream ss(e.value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) items.push_back(item);
    }
    return items;
  }

  [[noreturn]] static void fail(const Entry& e, const std::string& key, const std::string& why) {
    throw ConfigError("config line " + std::to_string(e.line) + ": " + key + " = '" + e.value +
                      "': " + why);
  }

  void reject(const std::vector<std::string>& keys, const std::string& why) {
    for (const auto& key : keys) {
      if (auto e = take(key)) fail(*e, key, why);
    }
  }

  void finish() const {
    if (entries_.empty()) return;
    const auto& [key, e] = *entries_.begin();
    throw ConfigError("config line " + std::to_string(e.line) + ": unknown key '" + key + "'");
  }

 private:
  std::map<std::string, Entry> entries_;
};

std::string resolve(const std::string& base_dir, const std::string& path) {
  if (path.empty()) return path;
  const fs::path p(path);
  return p.is_absolute() ? path : (fs::path(base_dir) / p).lexically_normal().string();
}

DatasetKind parse_dataset(const Entry& e) {
  if (e.value == "synthetic_regression") return DatasetKind::kSyntheticRegression;
  if (e.value == "synthetic_classification") return DatasetKind::kSyntheticClassification;
  if (e.value == "csv") return DatasetKind::kCsv;
  if (e.value == "idx") return DatasetKind::kIdx;
  Reader::fail(e, "dataset",
               "expected synthetic_regression, synthetic_classification, csv or idx");
}

OptimizerKind parse_optimizer(const Entry& e) {
  if (e.value == "newton_cg") return OptimizerKind::kNewtonCG;
  if (e.value == "sgd") return OptimizerKind::kSgd;
  if (e.value == "adam") return OptimizerKind::kAdam;
  Reader::fail(e, "optimizer", "expected newton_cg, sgd or adam");
}

const std::vector<std::string> kNewtonKeys{"tau", "cg_tol", "max_iter"};
const std::vector<std::string> kAdamKeys{"beta1", "beta2", "delta"};

}  // namespace

std::string_view to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::kSyntheticRegression: return "synthetic_regression";
    case DatasetKind::kSyntheticClassification: return "synthetic_classification";
    case DatasetKind::kCsv: return "csv";
    case DatasetKind::kIdx: return "idx";
  }
  return "?";
}

std::string_view to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::kNewtonCG: return "newton_cg";
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kAdam: return "adam";
  }
  return "?";
}

double RunConfig::learning_rate() const {
  switch (optimizer) {
    case OptimizerKind::kNewtonCG: return newton.learning_rate;
    case OptimizerKind::kAdam: return adam.learning_rate;
    case OptimizerKind::kSgd: return sgd_learning_rate;
  }
  return 0.0;
}

std::unique_ptr<Optimizer> RunConfig::make_optimizer() const {
  switch (optimizer) {
    case OptimizerKind::kNewtonCG: return std::make_unique<NewtonCGOptimizer>(newton);
    case OptimizerKind::kAdam: return std::make_unique<AdamOptimizer>(adam);
    case OptimizerKind::kSgd: return std::make_unique<SgdOptimizer>(sgd_learning_rate);
  }
  return nullptr;
}

Network RunConfig::network() const { return parse_arch(arch); }

RunConfig parse_config(std::istream& in, const std::string& base_dir) {
  std::map<std::string, Entry> entries;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(std::string_view(raw).substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    }
    if (entries.count(key)) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key +
                        "' (first set on line " + std::to_string(entries[key].line) + ")");
    }
    entries[key] = {std::move(value), line_no};
  }

  Reader r(std::move(entries));
  RunConfig c;
  r.text("scenario", c.scenario);
  if (auto e = r.take("dataset")) c.dataset = parse_dataset(*e);
  r.number("synth_samples", c.synth_samples);
  r.number("synth_features", c.synth_features);
  r.number("synth_classes", c.synth_classes);
  r.number("synth_noise", c.synth_noise);
  r.number("synth_seed", c.synth_seed);
  r.text("csv_path", c.csv_path);
  if (auto e = r.take("csv_targets")) c.csv_targets = r.list(*e);
  r.boolean("standardize", c.standardize);
  r.text("idx_images", c.idx_images);
  r.text("idx_labels", c.idx_labels);
  if (r.has("idx_limit")) {
    std::size_t limit = 0;
    r.number("idx_limit", limit);
    c.idx_limit = limit;
  }
  r.number("validation_fraction", c.validation_fraction);
  r.text("arch", c.arch);

  if (auto e = r.take("optimizer")) c.optimizer = parse_optimizer(*e);
  switch (c.optimizer) {
    case OptimizerKind::kNewtonCG:
      r.number("learning_rate", c.newton.learning_rate);
      r.number("tau", c.newton.tau);
      r.number("cg_tol", c.newton.cg_tol);
      r.number("max_iter", c.newton.max_iter);
      r.reject(kAdamKeys, "only valid with optimizer = adam");
      break;
    case OptimizerKind::kAdam:
      r.number("learning_rate", c.adam.learning_rate);
      r.number("beta1", c.adam.beta1);
      r.number("beta2", c.adam.beta2);
      r.number("delta", c.adam.delta);
      r.reject(kNewtonKeys, "only valid with optimizer = newton_cg");
      break;
    case OptimizerKind::kSgd:
      r.number("learning_rate", c.sgd_learning_rate);
      r.reject(kNewtonKeys, "only valid with optimizer = newton_cg");
      r.reject(kAdamKeys, "only valid with optimizer = adam");
      break;
  }

  r.number("epochs", c.epochs);
  r.number("batch_size", c.batch_size);
  r.number("workers", c.workers);
  if (auto e = r.take("reduction")) {
    try {
      c.reduction = parse_reduction(e->value);
    } catch (const ConfigError&) {
      Reader::fail(*e, "reduction", "expected mean or sum");
    }
  }
  r.number("seed_init", c.seed_init);
  r.number("seed_shuffle", c.seed_shuffle);
  r.boolean("shuffle", c.shuffle);
  r.text("out_dir", c.out_dir);
  if (auto e = r.take("worker_counts")) {
    c.worker_counts.clear();
    for (const auto& item : r.list(*e)) {
      std::size_t k = 0;
      auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), k);
      if (ec != std::errc{} || ptr != item.data() + item.size()) {
        Reader::fail(*e, "worker_counts", "expected a comma-separated list of integers");
      }
      c.worker_counts.push_back(k);
    }
  }
  r.boolean("timing", c.timing);
  r.finish();

  c.csv_path = resolve(base_dir, c.csv_path);
  c.idx_images = resolve(base_dir, c.idx_images);
  c.idx_labels = resolve(base_dir, c.idx_labels);
  c.out_dir = resolve(base_dir, c.out_dir);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  return parse_config(in, fs::path(path).parent_path().string());
}

void validate(const RunConfig& c) {
  if (c.arch.empty()) throw ConfigError("config: arch is required");
  const Network net = c.network();
  switch (c.optimizer) {
    case OptimizerKind::kNewtonCG: c.newton.validate(); break;
    case OptimizerKind::kAdam: c.adam.validate(); break;
    case OptimizerKind::kSgd:
      if (!(c.sgd_learning_rate > 0.0)) throw ConfigError("config: learning_rate must be > 0");
      break;
  }
  if (c.batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  ParallelPlan{c.workers, c.reduction, c.batch_size}.validate();
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0)) {
    throw ConfigError("config: validation_fraction must be in [0, 1)");
  }
  for (std::size_t k : c.worker_counts) {
    if (k < 1) throw ConfigError("config: worker_counts entries must be >= 1");
  }

  std::size_t features = 0;
  std::size_t targets = 0;
  auto require_file = [](const std::string& key, const std::string& path) {
    if (path.empty()) throw ConfigError("config: " + key + " is required for this dataset");
    if (!fs::is_regular_file(path)) {
      throw ConfigError("config: " + key + " '" + path + "' does not exist");
    }
  };
  switch (c.dataset) {
    case DatasetKind::kSyntheticRegression:
      features = c.synth_features;
      targets = 1;
      break;
    case DatasetKind::kSyntheticClassification:
      features = c.synth_features;
      targets = c.synth_classes;
      if (c.synth_classes < 2) throw ConfigError("config: synth_classes must be >= 2");
      break;
    case DatasetKind::kCsv:
      require_file("csv_path", c.csv_path);
      if (c.csv_targets.empty()) throw ConfigError("config: csv_targets is required");
      targets = c.csv_targets.size();
      features = net.input_dim();  // checked against the header at load time
      break;
    case DatasetKind::kIdx:
      require_file("idx_images", c.idx_images);
      require_file("idx_labels", c.idx_labels);
      targets = 10;
      features = net.input_dim();
      break;
  }
  if (c.dataset == DatasetKind::kSyntheticRegression ||
      c.dataset == DatasetKind::kSyntheticClassification) {
    if (c.synth_samples < 1) throw ConfigError("config: synth_samples must be >= 1");
    if (c.synth_features < 1) throw ConfigError("config: synth_features must be >= 1");
    if (!(c.synth_noise >= 0.0)) throw ConfigError("config: synth_noise must be >= 0");
  }
  if (net.input_dim() != features) {
    throw ConfigError("config: arch input_dim " + std::to_string(net.input_dim()) +
                      " does not match the dataset's " + std::to_string(features) +
                      " features");
  }
  if (net.output_dim() != targets) {
    throw ConfigError("config: arch output width " + std::to_string(net.output_dim()) +
                      " does not match the dataset's " + std::to_string(targets) + " targets");
  }
}

Dataset load_dataset(const RunConfig& c) {
  Dataset ds;
  switch (c.dataset) {
    case DatasetKind::kSyntheticRegression:
      ds = synth_regression(c.synth_seed, c.synth_samples, c.synth_features, c.synth_noise);
      break;
    case DatasetKind::kSyntheticClassification:
      ds = synth_classification(c.synth_seed, c.synth_samples, c.synth_features, c.synth_classes);
      break;
    case DatasetKind::kCsv:
      ds = load_csv(c.csv_path, c.csv_targets, c.standardize);
      break;
    case DatasetKind::kIdx:
      ds = load_idx(c.idx_images, c.idx_labels, c.idx_limit);
      break;
  }
  const Network net = c.network();
  if (static_cast<std::size_t>(ds.features.cols()) != net.input_dim()) {
    throw ConfigError("config: arch input_dim " + std::to_string(net.input_dim()) +
                      " does not match the dataset's " + std::to_string(ds.features.cols()) +
                      " features");
  }
  return ds;
}

}  // namespace nforge
