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


#include "newton_forge/runner.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "newton_forge/error.hpp"
#include "newton_forge/linsolve.hpp"
#include "newton_forge/parallel.hpp"
#include "newton_forge/random.hpp"

namespace nforge {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

double rel_norm(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

Batch head_batch(const Dataset& ds, std::size_t rows) {
  const auto b = static_cast<Eigen::Index>(std::min<std::size_t>(rows, ds.size()));
  return {ds.features.topRows(b), ds.targets.topRows(b)};
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw Error("cannot write '" + path.string() + "'");
}

// Accuracy on the validation split when there is one, else on the training rows.
double epoch_accuracy(const Network& net, const WeightVector& w, const Split& split) {
  const Dataset& eval = split.validation ? *split.validation : split.train;
  return accuracy(net, w, eval.as_batch());
}

}  // namespace

void Overrides::apply(RunConfig& c) const {
  if (seed_init) c.seed_init = *seed_init;
  if (seed_shuffle) c.seed_shuffle = *seed_shuffle;
  if (workers) {
    c.workers = *workers;
    c.worker_counts = {1};
    if (*workers > 1) c.worker_counts.push_back(*workers);
  }
  if (no_shuffle) c.shuffle = false;
  if (out_dir) c.out_dir = *out_dir;
}

void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> records) {
  out << kMetricsHeader << '\n';
  for (const auto& r : records) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%s,%.17g,%zu,%d,%.3f\n", r.step, r.epoch,
                  r.loss, r.accuracy ? fmt("%.6f", *r.accuracy).c_str() : "", r.grad_norm,
                  r.cg_iterations, r.fallback_used ? 1 : 0, r.wall_ms);
    out << buf;
  }
}

TrainResult train(const RunConfig& config, const Dataset& dataset) {
  validate(config);
  const Split split = split_dataset(dataset, config.validation_fraction, config.seed_shuffle);
  const bool classification = dataset.task == Task::kClassification;

  TrainResult result{config.network(), {}, {}, {}, 0.0, std::nullopt, split.train.size(),
                     std::nullopt};
  const Network& net = result.network;
  result.initial_weights = init_weights(net, config.seed_init);
  WeightVector w = result.initial_weights;
  auto optimizer = config.make_optimizer();

  std::size_t step = 0;
  try {
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      const auto batches =
          epoch_batches(split.train, config.batch_size, epoch, config.seed_shuffle, config.shuffle);
      for (std::size_t i = 0; i < batches.size(); i += config.workers) {
        const std::size_t k = std::min(config.workers, batches.size() - i);
        const auto t0 = Clock::now();
        ParallelResult r = parallel_step(net, w, std::span(batches).subspan(i, k), *optimizer,
                                         config.reduction);
        const auto t1 = Clock::now();

        MetricsRecord rec;
        rec.step = ++step;
        rec.epoch = epoch;
        for (const auto& wr : r.workers) {
          rec.loss += wr.step.loss_before;
          rec.grad_norm += wr.step.grad_norm;
          rec.cg_iterations += wr.step.cg_iterations;
          rec.fallback_used = rec.fallback_used || wr.step.fallback_used;
        }
        rec.grad_norm /= static_cast<double>(r.workers.size());
        if (config.timing) {
          rec.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        }
        if (!std::isfinite(rec.loss)) {
          throw NonFiniteError("train: loss is not finite at step " + std::to_string(rec.step), rec.step);
        }
        if (!r.weights.allFinite()) {
          throw NonFiniteError(
              "train: weights are not finite after step " + std::to_string(rec.step), rec.step);
        }
        w = std::move(r.weights);
        if (classification && i + k >= batches.size()) rec.accuracy = epoch_accuracy(net, w, split);
        result.metrics.push_back(rec);
      }
    }
    result.final_loss = loss_value(net, w, split.train.as_batch());
    if (!std::isfinite(result.final_loss)) {
      throw NonFiniteError("train: final loss is not finite", step);
    }
  } catch (const NonFiniteError& e) {
    result.divergence = std::string(e.what());
  }
  if (classification && !result.divergence) result.final_accuracy = epoch_accuracy(net, w, split);
  result.weights = std::move(w);
  return result;
}

std::vector<CheckRow> run_checks(const RunConfig& config, const Dataset& dataset,
                                 const CheckOptions& options) {
  validate(config);
  const Network net = config.network();
  const Batch batch = head_batch(dataset, config.batch_size);
  const NetworkObjective objective(net, batch);
  const std::size_t n = net.weight_count();
  const WeightVector w = init_weights(net, config.seed_init);
  Rng rng(mix_seed(config.seed_init, 0xc4ec));
  auto random_direction = [&] {
    Vector s(static_cast<Eigen::Index>(n));
    for (auto& v : s) v = rng.normal();
    return s;
  };

  std::vector<CheckRow> rows;
  struct CorruptGuard {
    explicit CorruptGuard(bool on) { autodiff::testing::set_corrupt_adjoint(on); }
    ~CorruptGuard() { autodiff::testing::set_corrupt_adjoint(false); }
  } guard(options.corrupt_adjoint);

  // Gradient against central differences, h = 1e-5. Large networks are probed
  // on a seeded subset of at most 200 coordinates.
  {
    constexpr double h = 1e-5;
    const GradVector g = autodiff::value_and_gradient(objective, w).gradient;
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    if (n > 200) {
      rng.shuffle(coords);
      coords.resize(200);
    }
    double worst = 0.0;
    for (std::size_t i : coords) {
      const auto idx = static_cast<Eigen::Index>(i);
      WeightVector wp = w, wm = w;
      wp[idx] += h;
      wm[idx] -= h;
      const double fd = (loss_value(net, wp, batch) - loss_value(net, wm, batch)) / (2 * h);
      worst = std::max(worst, std::abs(g[idx] - fd) / std::max(1.0, std::abs(fd)));
    }
    rows.push_back({"gradient vs finite differences", worst, 1e-6, worst <= 1e-6});
  }

  {
    autodiff::SweepCounter counter;
    (void)autodiff::value_and_gradient(objective, w);
    const auto after_grad = counter.count();
    (void)autodiff::hvp(objective, w, random_direction());
    const auto after_hvp = counter.count() - after_grad;
    // Value is the total deviation from the 1 and 2 sweep budgets.
    const double off = std::abs(static_cast<double>(after_grad) - 1.0) +
                       std::abs(static_cast<double>(after_hvp) - 2.0);
    rows.push_back({"reverse sweeps (gradient 1, hvp 2)", off, 0.0, off == 0.0});
  }

  // HVP against the directional finite difference of the gradient.
  {
    constexpr double h = 1e-5;
    const Vector s = random_direction();
    const Vector hs = autodiff::hvp(objective, w, s);
    const Vector gp = autodiff::value_and_gradient(objective, w + h * s).gradient;
    const Vector gm = autodiff::value_and_gradient(objective, w - h * s).gradient;
    const double err = rel_norm(hs, (gp - gm) / (2 * h));
    rows.push_back({"hvp vs finite differences", err, 1e-5, err <= 1e-5});
  }

  {
    const Vector s1 = random_direction(), s2 = random_direction();
    const Vector h1 = autodiff::hvp(objective, w, s1), h2 = autodiff::hvp(objective, w, s2);
    const double a = s1.dot(h2), b = s2.dot(h1);
    const double sym = std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
    rows.push_back({"hvp symmetry", sym, 1e-10, sym <= 1e-10});

    const double ca = rng.uniform(-2.0, 2.0), cb = rng.uniform(-2.0, 2.0);
    const Vector combo = autodiff::hvp(objective, w, ca * s1 + cb * s2);
    const double lin = rel_norm(combo, ca * h1 + cb * h2);
    rows.push_back({"hvp linearity", lin, 1e-10, lin <= 1e-10});
  }

  // CG on (H + shift I) against a dense solve, for small n. The shift keeps
  // the system SPD with condition number at most about 11.
  if (n <= 50) {
    Matrix hess(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) {
      hess.col(static_cast<Eigen::Index>(j)) =
          autodiff::hvp(objective, w, Vector::Unit(static_cast<Eigen::Index>(n),
                                                   static_cast<Eigen::Index>(j)));
    }
    const Matrix sym = 0.5 * (hess + hess.transpose());
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(sym, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff(), hi = eig.eigenvalues().maxCoeff();
    const double shift = std::max(config.newton.tau, -lo + std::max(1.0, 0.1 * (hi - lo)));
    const Vector b = -autodiff::value_and_gradient(objective, w).gradient;
    const CGResult cg = cg_solve(
        [&](const Vector& v) { return Vector(autodiff::hvp(objective, w, v) + shift * v); }, b,
        1e-12, 10 * n);
    const Matrix shifted = sym + shift * Matrix::Identity(sym.rows(), sym.cols());
    const Vector dense = shifted.llt().solve(b);
    const double err = b.norm() == 0.0 ? cg.solution.norm() : rel_norm(cg.solution, dense);
    rows.push_back({"cg vs dense solve (n <= 50)", err, 1e-8, err <= 1e-8});
  } else {
    rows.push_back({"cg vs dense solve (n <= 50)", std::nullopt, 1e-8, true});
  }

  // A single identity layer under squared error is quadratic in W: the Hessian
  // is 2 X'X on each output neuron's block.
  const bool quadratic = net.layers().size() == 1 &&
                         net.layers()[0].activation == Activation::kIdentity &&
                         net.loss() == LossKind::kSumSquaredError;
  if (quadratic) {
    const auto in = static_cast<Eigen::Index>(net.input_dim() + 1);
    Matrix xa(batch.features.rows(), in);
    xa << batch.features, Vector::Ones(batch.features.rows());
    const Matrix block = 2.0 * xa.transpose() * xa;
    const Vector s = random_direction();
    Vector expected(s.size());
    for (Eigen::Index o = 0; o < static_cast<Eigen::Index>(net.output_dim()); ++o) {
      expected.segment(o * in, in) = block * s.segment(o * in, in);
    }
    const double err = rel_norm(autodiff::hvp(objective, w, s), expected);
    rows.push_back({"hvp vs analytic hessian (quadratic)", err, 1e-12, err <= 1e-12});
  } else {
    rows.push_back({"hvp vs analytic hessian (quadratic)", std::nullopt, 1e-12, true});
  }
  return rows;
}

int cmd_train(const std::string& config_path, const Overrides& overrides, std::ostream& out,
              std::ostream& err) {
  RunConfig config;
  Dataset dataset;
  try {
    config = load_config(config_path);
    overrides.apply(config);
    validate(config);
    dataset = load_dataset(config);
  } catch (const Error& e) {
    err << "train: config: " << e.what() << '\n';
    return kExitConfig;
  }

  TrainResult result;
  try {
    result = train(config, dataset);
    fs::create_directories(config.out_dir);
  } catch (const Error& e) {
    err << "train: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    err << "train: output: " << e.what() << '\n';
    return kExitConfig;
  }

  const fs::path dir(config.out_dir);
  std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
  write_metrics_csv(metrics, result.metrics);
  metrics.close();

  std::ostringstream summary;
  summary << "scenario = " << config.scenario << '\n'
          << "optimizer = " << to_string(config.optimizer) << '\n'
          << "epochs = " << config.epochs << '\n'
          << "workers = " << config.workers << '\n'
          << "steps = " << result.metrics.size() << '\n'
          << "train_rows = " << result.train_rows << '\n';
  if (result.divergence) {
    summary << "status = diverged\n" << "reason = " << *result.divergence << '\n';
    write_file(dir / "summary.txt", summary.str());
    err << "train: diverged: " << *result.divergence << '\n';
    return kExitDivergence;
  }
  summary << "status = ok\n" << "final_loss = " << fmt("%.17g", result.final_loss) << '\n';
  if (result.final_accuracy) summary << "final_accuracy = " << fmt("%.6f", *result.final_accuracy) << '\n';
  write_file(dir / "summary.txt", summary.str());
  save_model((dir / "model.nfm").string(), result.network, result.weights);

  out << "trained " << config.scenario << " with " << to_string(config.optimizer) << ": "
      << result.metrics.size() << " steps, final loss " << fmt("%.6g", result.final_loss);
  if (result.final_accuracy) out << ", accuracy " << fmt("%.4f", *result.final_accuracy);
  out << "\nwrote " << dir.string() << "/{metrics.csv,model.nfm,summary.txt}\n";
  return kExitOk;
}

int cmd_check(const std::string& config_path, const Overrides& overrides,
              const CheckOptions& options, std::ostream& out, std::ostream& err) {
  std::vector<CheckRow> rows;
  try {
    RunConfig config = load_config(config_path);
    overrides.apply(config);
    validate(config);
    rows = run_checks(config, load_dataset(config), options);
  } catch (const NonFiniteError& e) {
    err << "check: " << e.what() << '\n';
    return kExitCheckFailure;
  } catch (const Error& e) {
    err << "check: config: " << e.what() << '\n';
    return kExitConfig;
  }

  bool all = true;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-38s %12s %10s  %s\n", "check", "value", "tolerance", "result");
  out << buf;
  for (const auto& r : rows) {
    all = all && r.passed;
    const std::string value = r.value ? fmt("%.3e", *r.value) : "-";
    std::snprintf(buf, sizeof buf, "%-38s %12s %10s  %s\n", r.name.c_str(), value.c_str(),
                  fmt("%.0e", r.tolerance).c_str(),
                  !r.value ? "skip" : (r.passed ? "pass" : "FAIL"));
    out << buf;
  }
  for (const auto& r : rows) {
    if (!r.passed) err << "check failed: " << r.name << '\n';
  }
  return all ? kExitOk : kExitCheckFailure;
}

int cmd_benchmark(const std::string& config_path, const Overrides& overrides,
                  std::ostream& out, std::ostream& err) {
  try {
    RunConfig config = load_config(config_path);
    overrides.apply(config);
    validate(config);
    const Dataset dataset = load_dataset(config);
    const Network net = config.network();
    const auto prototype = config.make_optimizer();
    BenchmarkSettings settings;
    settings.per_worker_batch_size = config.batch_size;
    settings.reduction = config.reduction;
    settings.init_seed = config.seed_init;
    settings.shuffle_seed = config.seed_shuffle;
    settings.shuffle = config.shuffle;
    const ScalingReport report =
        run_scaling_benchmark(net, dataset, *prototype, config.worker_counts, settings);
    for (const auto& w : report.warnings) err << "benchmark: warning: " << w << '\n';

    fs::create_directories(config.out_dir);
    std::ofstream csv(fs::path(config.out_dir) / "scaling.csv", std::ios::binary);
    write_scaling_csv(csv, report.records);
    out << format_scaling_table(report.records);
    return kExitOk;
  } catch (const NonFiniteError& e) {
    err << "benchmark: diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const Error& e) {
    err << "benchmark: config: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    err << "benchmark: output: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace nforge
