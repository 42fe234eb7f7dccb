#include <doctest.h>

#include <cstring>
#include <sstream>

#include "newton_forge/error.hpp"
#include "newton_forge/parallel.hpp"
#include "oracles.hpp"

using namespace nforge;

namespace {

struct Fixture {
  Network net = build_mlp(4, {{6, Activation::kTanh}, {2, Activation::kIdentity}},
                          LossKind::kSumSquaredError);
  std::vector<Batch> batches;
  Vector w;
  explicit Fixture(std::uint64_t seed, std::size_t k = 4) {
    Rng rng(seed);
    for (std::size_t i = 0; i < k; ++i) batches.push_back(oracle::random_batch(rng, net, 8));
    w = init_weights(net, seed);
  }
};

bool bitwise_equal(const Vector& a, const Vector& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("parallel_step: one worker equals a direct Newton-CG step") {
  const Fixture f(1, 1);
  NewtonCGOptimizer opt(NewtonCGConfig{});
  const auto result = parallel_step(f.net, f.w, f.batches, opt);
  const NewtonStep direct = newton_cg_step(f.net, f.w, f.batches[0], NewtonCGConfig{});
  CHECK(bitwise_equal(result.weights, direct.weights));
  CHECK(result.workers.size() == 1);
  CHECK(result.workers[0].step.cg_iterations == direct.report.cg_iterations);
}

TEST_CASE("parallel_step: identical batches reduce to the single-worker update") {
  const Fixture f(2, 1);
  const std::vector<Batch> same(4, f.batches[0]);
  std::vector<std::unique_ptr<Optimizer>> opts;
  opts.push_back(std::make_unique<SgdOptimizer>(0.05));
  opts.push_back(std::make_unique<AdamOptimizer>(AdamConfig{}));
  opts.push_back(std::make_unique<NewtonCGOptimizer>(NewtonCGConfig{}));
  for (auto& proto : opts) {
    CAPTURE(proto->name());
    auto single = proto->clone();
    auto multi = proto->clone();
    // Two steps so Adam's merged state is exercised.
    Vector ws = f.w, wm = f.w;
    for (int step = 0; step < 2; ++step) {
      ws = parallel_step(f.net, ws, std::span(f.batches).first(1), *single).weights;
      wm = parallel_step(f.net, wm, same, *multi).weights;
      CHECK(bitwise_equal(ws, wm));
    }
  }
}

TEST_CASE("parallel_step: SGD mean and sum reductions match a sequential oracle") {
  const Fixture f(3, 2);
  const double lr = 0.01;
  const Vector g1 = autodiff::value_and_gradient(NetworkObjective(f.net, f.batches[0]), f.w).gradient;
  const Vector g2 = autodiff::value_and_gradient(NetworkObjective(f.net, f.batches[1]), f.w).gradient;

  SgdOptimizer sgd(lr);
  const Vector mean = parallel_step(f.net, f.w, f.batches, sgd, Reduction::kMean).weights;
  CHECK(oracle::rel_norm(mean - f.w, -lr * (g1 + g2) / 2.0) <= 1e-12);
  // Equivalent to one SGD step with the averaged gradient.
  CHECK((mean - sgd_step(f.w, (g1 + g2) / 2.0, lr)).cwiseAbs().maxCoeff() <= 1e-15);

  const Vector sum = parallel_step(f.net, f.w, f.batches, sgd, Reduction::kSum).weights;
  CHECK(oracle::rel_norm(sum - f.w, -lr * (g1 + g2)) <= 1e-12);
}

TEST_CASE("parallel_step: Newton-CG workers each solve their own system") {
  const Fixture f(4, 3);
  NewtonCGConfig cfg;
  cfg.tau = 50.0;  // keeps H + tau I positive definite for these batches
  cfg.cg_tol = 1e-8;
  cfg.max_iter = 200;
  NewtonCGOptimizer opt(cfg);
  const auto result = parallel_step(f.net, f.w, f.batches, opt);
  Vector mean = Vector::Zero(f.w.size());
  for (std::size_t i = 0; i < f.batches.size(); ++i) {
    const NetworkObjective obj(f.net, f.batches[i]);
    const NewtonStep own = newton_cg_step(obj, f.w, cfg);
    CHECK(own.report.cg_termination == CGTermination::kToleranceMet);
    CHECK(result.workers[i].step.cg_iterations == own.report.cg_iterations);
    if (!own.report.fallback_used) {
      const Vector g = autodiff::value_and_gradient(obj, f.w).gradient;
      const Vector resid = autodiff::hvp(obj, f.w, own.direction) + cfg.tau * own.direction + g;
      CHECK(resid.norm() <= 1e-7 * g.norm());
    }
    mean += (cfg.learning_rate * own.direction - mean) / static_cast<double>(i + 1);
  }
  CHECK(bitwise_equal(result.weights, f.w + mean));
}

TEST_CASE("parallel_step: snapshot purity and determinism") {
  const Fixture f(5, 4);
  AdamOptimizer a(AdamConfig{}), b(AdamConfig{});
  const auto r1 = parallel_step(f.net, f.w, f.batches, a);
  const auto r2 = parallel_step(f.net, f.w, f.batches, b);
  CHECK(r1.snapshot_hash == hash_weights(f.w));
  for (const auto& wr : r1.workers) CHECK(wr.snapshot_hash == r1.snapshot_hash);
  CHECK(bitwise_equal(r1.weights, r2.weights));
  CHECK(a.state().k == 1);
}

TEST_CASE("parallel_step: a failing worker aborts the step") {
  Fixture f(6, 3);
  f.batches[1].features = Matrix::Ones(8, 5);  // wrong input width
  SgdOptimizer sgd(0.1);
  try {
    (void)parallel_step(f.net, f.w, f.batches, sgd);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("worker 1") != std::string::npos);
  }
  CHECK_THROWS_AS(parallel_step(f.net, f.w, std::span<const Batch>{}, sgd), Error);
}

TEST_CASE("scaling records reproduce the published efficiency row") {
  const std::size_t workers[] = {1, 2, 4, 8};
  const double seconds[] = {104, 60, 36, 23};
  const auto rec = scaling_records(workers, seconds);
  CHECK(rec[0].parallel_efficiency == 1.0);
  CHECK(rec[1].parallel_efficiency == doctest::Approx(104.0 / 120.0));
  CHECK(format_efficiency(rec[0].parallel_efficiency) == "100%");
  CHECK(format_efficiency(rec[1].parallel_efficiency) == "86.6%");
  CHECK(format_efficiency(rec[2].parallel_efficiency) == "72.2%");
  CHECK(format_efficiency(rec[3].parallel_efficiency) == "56.5%");
  CHECK(format_efficiency(0.7) == "70.0%");

  const std::string table = format_scaling_table(rec);
  CHECK(table.find("runtime") != std::string::npos);
  CHECK(table.find("104s") != std::string::npos);
  CHECK(table.find("86.6%") != std::string::npos);
  CHECK(table.find("8 workers") != std::string::npos);

  std::ostringstream csv;
  write_scaling_csv(csv, rec);
  CHECK(csv.str().rfind("workers,wall_seconds,parallel_efficiency\n1,104.000000,1.000000\n", 0) == 0);

  const std::size_t no_one[] = {2};
  const double t[] = {1.0};
  CHECK_THROWS_AS(scaling_records(no_one, t), Error);
}

TEST_CASE("run_scaling_benchmark: single worker and oversubscription warnings") {
  const Dataset ds = synth_regression(1, 64, 3, 0.1);
  const Network net = build_mlp(3, {{4, Activation::kTanh}, {1, Activation::kIdentity}},
                                LossKind::kSumSquaredError);
  const NewtonCGOptimizer proto(NewtonCGConfig{});
  BenchmarkSettings settings;
  settings.per_worker_batch_size = 8;
  const std::size_t one[] = {1};
  const auto r1 = run_scaling_benchmark(net, ds, proto, one, settings);
  REQUIRE(r1.records.size() == 1);
  CHECK(r1.records[0].parallel_efficiency == 1.0);
  CHECK(r1.records[0].wall_seconds > 0.0);

  const std::size_t many[] = {1, 1024};
  const auto r2 = run_scaling_benchmark(net, ds, proto, many, settings);
  CHECK(r2.records.size() == 2);
  CHECK_FALSE(r2.warnings.empty());
  const std::size_t missing[] = {2};
  CHECK_THROWS_AS(run_scaling_benchmark(net, ds, proto, missing, settings), ConfigError);
}
