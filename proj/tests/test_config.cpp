#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "newton_forge/config.hpp"
#include "newton_forge/error.hpp"

using namespace nforge;

namespace {

RunConfig parse(const std::string& text, const std::string& base = "/base") {
  std::istringstream in(text);
  return parse_config(in, base);
}

std::string config_error(const std::string& text) {
  try {
    (void)parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("parse_config: values, comments and defaults") {
  const RunConfig c = parse(R"(
# a comment
scenario = demo   # trailing comment
dataset = synthetic_classification
synth_samples = 64
synth_features=3
synth_classes = 2
arch = 3:4relu:2softmax:cross_entropy
optimizer = adam
learning_rate = 0.01
beta1 = 0.8
epochs = 4
workers = 2
reduction = sum
shuffle = false
worker_counts = 1, 2,4
timing = true
)");
  CHECK(c.scenario == "demo");
  CHECK(c.dataset == DatasetKind::kSyntheticClassification);
  CHECK(c.synth_samples == 64);
  CHECK(c.synth_features == 3);
  CHECK(c.optimizer == OptimizerKind::kAdam);
  CHECK(c.adam.learning_rate == 0.01);
  CHECK(c.adam.beta1 == 0.8);
  CHECK(c.adam.beta2 == 0.999);
  CHECK(c.learning_rate() == 0.01);
  CHECK(c.epochs == 4);
  CHECK(c.workers == 2);
  CHECK(c.reduction == Reduction::kSum);
  CHECK_FALSE(c.shuffle);
  CHECK(c.worker_counts == std::vector<std::size_t>{1, 2, 4});
  CHECK(c.timing);
  CHECK(c.batch_size == 32);
  CHECK(c.validation_fraction == 0.1);
  CHECK(c.make_optimizer()->name() == "adam");
  validate(c);
}

TEST_CASE("parse_config: optimizer defaults") {
  const RunConfig c = parse("arch = 13:1identity:sse\n");
  CHECK(c.optimizer == OptimizerKind::kNewtonCG);
  CHECK(c.newton.learning_rate == 0.01);
  CHECK(c.newton.tau == 1.0);
  CHECK(c.newton.cg_tol == 1e-4);
  CHECK(c.newton.max_iter == 20);
  validate(c);
}

TEST_CASE("parse_config: rejects malformed input with the line number") {
  CHECK(config_error("epochs = 3\nnot a pair\n").find("line 2") != std::string::npos);
  CHECK(config_error("colour = red\n").find("unknown key 'colour'") != std::string::npos);
  CHECK(config_error("epochs = 3\nepochs = 4\n").find("duplicate") != std::string::npos);
  CHECK(config_error("epochs = three\n").find("expected a number") != std::string::npos);
  CHECK(config_error("epochs = -1\n").find("epochs") != std::string::npos);
  CHECK(config_error("tau = nan\n").find("finite") != std::string::npos);
  CHECK(config_error("shuffle = maybe\n").find("true or false") != std::string::npos);
  CHECK(config_error("optimizer = lbfgs\n").find("newton_cg, sgd or adam") != std::string::npos);
  CHECK(config_error("dataset = parquet\n").find("dataset") != std::string::npos);
  CHECK(config_error("reduction = max\n").find("mean or sum") != std::string::npos);
  CHECK(config_error("worker_counts = 1, two\n").find("worker_counts") != std::string::npos);
}

TEST_CASE("parse_config: optimizer-specific keys") {
  CHECK(config_error("optimizer = sgd\ntau = 1\n").find("only valid with optimizer = newton_cg") !=
        std::string::npos);
  CHECK(config_error("optimizer = newton_cg\nbeta1 = 0.5\n").find("optimizer = adam") !=
        std::string::npos);
  CHECK(config_error("optimizer = adam\nmax_iter = 5\n").find("newton_cg") != std::string::npos);
  // Order does not matter: the optimizer may be named after its keys.
  CHECK(parse("tau = 3\noptimizer = newton_cg\n").newton.tau == 3.0);
}

TEST_CASE("parse_config: paths resolve against the config directory") {
  const RunConfig c = parse("csv_path = data/x.csv\nout_dir = /abs/out\n", "/cfg/dir");
  CHECK(c.csv_path == "/cfg/dir/data/x.csv");
  CHECK(c.out_dir == "/abs/out");
  CHECK(parse("").out_dir == "/base/out");
}

TEST_CASE("validate: ranges, files and shapes") {
  CHECK_THROWS_AS(validate(parse("")), ConfigError);  // no arch
  CHECK_THROWS_AS(validate(parse("arch = 13:1identity:sse\nlearning_rate = 0\n")), ConfigError);
  CHECK_THROWS_AS(validate(parse("arch = 13:1identity:sse\nbatch_size = 0\n")), ConfigError);
  CHECK_THROWS_AS(validate(parse("arch = 13:1identity:sse\nworkers = 0\n")), ConfigError);
  CHECK_THROWS_AS(validate(parse("arch = 13:1identity:sse\nvalidation_fraction = 1\n")),
                  ConfigError);
  CHECK_THROWS_AS(validate(parse("arch = 13:1identity:sse\nworker_counts = 0, 2\n")),
                  ConfigError);
  CHECK_THROWS_AS(validate(parse("arch = 12:1identity:sse\n")), ConfigError);  // 13 features
  CHECK_THROWS_AS(validate(parse("arch = 13:2identity:sse\n")), ConfigError);  // 1 target
  CHECK_THROWS_AS(validate(parse("arch = 13:1identity:sse\noptimizer = adam\nbeta2 = 1\n")),
                  ConfigError);

  const std::string csv = "dataset = csv\ncsv_targets = y\narch = 2:1identity:sse\n";
  try {
    validate(parse(csv + "csv_path = missing.csv\n", "/nonexistent"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("does not exist") != std::string::npos);
  }
  const auto dir = std::filesystem::temp_directory_path();
  std::ofstream(dir / "nforge_cfg.csv") << "a,b,y\n1,2,3\n4,5,6\n";
  const RunConfig ok = parse(csv + "csv_path = nforge_cfg.csv\n", dir.string());
  validate(ok);
  CHECK(load_dataset(ok).size() == 2);
  CHECK_THROWS_AS(load_dataset(parse(csv + "csv_path = nforge_cfg.csv\narch = 3:1identity:sse\n",
                                     dir.string())),
                  ConfigError);
}

TEST_CASE("load_config: missing file") {
  CHECK_THROWS_AS(load_config("/nonexistent/run.cfg"), ConfigError);
}
