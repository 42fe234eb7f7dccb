#include <doctest.h>

#include <cmath>
#include <sstream>

#include "newton_forge/error.hpp"
#include "newton_forge/runner.hpp"

using namespace nforge;

namespace {

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in, "/tmp");
}

const std::string kRegression =
    "dataset = synthetic_regression\nsynth_samples = 100\nsynth_features = 3\n"
    "synth_noise = 0.1\nsynth_seed = 4\narch = 3:5tanh:1identity:sse\nbatch_size = 8\n";

const std::string kClassification =
    "dataset = synthetic_classification\nsynth_samples = 120\nsynth_features = 4\n"
    "synth_classes = 3\nsynth_seed = 4\narch = 4:6tanh:3softmax:cross_entropy\n"
    "batch_size = 10\noptimizer = sgd\nlearning_rate = 0.01\n";

TrainResult run(const std::string& text) {
  const RunConfig c = parse(text);
  return train(c, load_dataset(c));
}

std::string csv(const TrainResult& r) {
  std::ostringstream out;
  write_metrics_csv(out, r.metrics);
  return out.str();
}

}  // namespace

TEST_CASE("train: zero epochs leaves the initialization") {
  const TrainResult r = run(kRegression + "epochs = 0\n");
  CHECK(r.metrics.empty());
  CHECK(r.weights == r.initial_weights);
  CHECK(r.initial_weights == init_weights(r.network, 1));
  CHECK(csv(r) == std::string(kMetricsHeader) + "\n");
}

TEST_CASE("train: one row per parallel step") {
  // 100 rows, 10% validation -> 90 training rows; 90 / 8 -> 12 batches.
  for (std::size_t k : {1, 3, 5}) {
    const TrainResult r = run(kRegression + "epochs = 3\nworkers = " + std::to_string(k) + "\n");
    const std::size_t per_epoch = (90 + 8 * k - 1) / (8 * k);
    CHECK(r.train_rows == 90);
    CHECK(r.metrics.size() == 3 * per_epoch);
    for (std::size_t i = 0; i < r.metrics.size(); ++i) {
      CHECK(r.metrics[i].step == i + 1);
      CHECK(r.metrics[i].epoch == i / per_epoch);
      CHECK(r.metrics[i].wall_ms == 0.0);
      CHECK(r.metrics[i].cg_iterations > 0);
    }
  }
}

TEST_CASE("train: metrics aggregate the workers of a step") {
  // With k = 2 each row's loss is the sum of two batch losses, each taken
  // at the pre-step weights, so the first row can be recomputed directly.
  const RunConfig c = parse(kRegression + "epochs = 1\nworkers = 2\nvalidation_fraction = 0\n");
  const Dataset ds = load_dataset(c);
  const TrainResult r = train(c, ds);
  const auto batches = epoch_batches(ds, 8, 0, c.seed_shuffle, true);
  const double expected = loss_value(r.network, r.initial_weights, batches[0]) +
                          loss_value(r.network, r.initial_weights, batches[1]);
  CHECK(r.metrics[0].loss == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("train: byte-identical reruns") {
  for (const char* k : {"1", "4"}) {
    const std::string cfg = kRegression + "epochs = 2\nworkers = " + k + "\n";
    const TrainResult a = run(cfg);
    const TrainResult b = run(cfg);
    CHECK(csv(a) == csv(b));
    CHECK(hash_weights(a.weights) == hash_weights(b.weights));
  }
}

TEST_CASE("train: noiseless regression at Newton-CG defaults") {
  const TrainResult r = run(
      "dataset = synthetic_regression\nsynth_samples = 1000\nsynth_features = 13\n"
      "synth_noise = 0\nsynth_seed = 11\narch = 13:1identity:sse\nepochs = 50\n");
  REQUIRE_FALSE(r.divergence);
  CHECK(r.final_loss < 1e-6 * static_cast<double>(r.train_rows));
}

TEST_CASE("train: classification accuracy on each epoch's last row") {
  const TrainResult r = run(kClassification + "epochs = 2\n");
  // 108 training rows / 10 -> 11 steps per epoch.
  REQUIRE(r.metrics.size() == 22);
  for (std::size_t i = 0; i < r.metrics.size(); ++i) {
    CHECK(r.metrics[i].accuracy.has_value() == ((i + 1) % 11 == 0));
    CHECK(r.metrics[i].cg_iterations == 0);
  }
  REQUIRE(r.final_accuracy);
  CHECK(*r.final_accuracy >= 0.0);
  CHECK(*r.final_accuracy <= 1.0);
  CHECK_FALSE(run(kRegression + "epochs = 1\n").final_accuracy);
}

TEST_CASE("train: divergence is reported, not thrown") {
  const TrainResult r = run(kRegression + "optimizer = sgd\nlearning_rate = 1e6\nepochs = 5\n");
  REQUIRE(r.divergence);
  CHECK(r.divergence->find("non-finite") != std::string::npos);
  CHECK(r.metrics.size() < 5 * 12);
}

TEST_CASE("write_metrics_csv: column layout") {
  MetricsRecord a;
  a.step = 1;
  a.loss = 0.5;
  a.grad_norm = 2.0;
  a.cg_iterations = 7;
  a.fallback_used = true;
  MetricsRecord b = a;
  b.step = 2;
  b.accuracy = 0.25;
  b.fallback_used = false;
  b.wall_ms = 1.5;
  std::ostringstream out;
  write_metrics_csv(out, std::vector<MetricsRecord>{a, b});
  CHECK(out.str() == std::string(kMetricsHeader) +
                         "\n1,0,0.5,,2,7,1,0.000\n2,0,0.5,0.250000,2,7,0,1.500\n");
}

TEST_CASE("run_checks: tiny MLP passes, corrupted adjoint fails the gradient row") {
  const RunConfig c = parse(
      "synth_samples = 32\nsynth_features = 13\nsynth_seed = 5\nsynth_noise = 0.1\n"
      "arch = 13:8tanh:1identity:sse\nseed_init = 42\n");
  const Dataset ds = load_dataset(c);
  for (const auto& row : run_checks(c, ds)) CHECK_MESSAGE(row.passed, row.name);
  const auto bad = run_checks(c, ds, {true});
  CHECK_FALSE(bad.front().passed);
  CHECK(bad.front().name == "gradient vs finite differences");
  CHECK_FALSE(autodiff::testing::corrupt_adjoint());  // hook restored
}

TEST_CASE("run_checks: small networks exercise the dense rows") {
  const RunConfig c = parse(
      "synth_samples = 8\nsynth_features = 1\nsynth_seed = 3\narch = 1:1identity:sse\n");
  const auto rows = run_checks(c, load_dataset(c));
  for (const auto& row : rows) {
    CHECK_MESSAGE(row.value.has_value(), row.name);
    CHECK_MESSAGE(row.passed, row.name);
  }
  const RunConfig mlp = parse(
      "synth_samples = 16\nsynth_features = 3\nsynth_seed = 3\narch = 3:4sigmoid:1identity:sse\n");
  const auto cg_row = run_checks(mlp, load_dataset(mlp))[5];
  CHECK(cg_row.name == "cg vs dense solve (n <= 50)");
  CHECK(cg_row.value.has_value());
  CHECK(cg_row.passed);
}
