#include <doctest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "newton_forge/network.hpp"

namespace fs = std::filesystem;

namespace {

std::string env(const char* name) {
  const char* v = std::getenv(name);
  REQUIRE_MESSAGE(v != nullptr, name << " must point at the build");
  return v;
}

struct Run {
  int code;
  std::string out;
};

// Runs the CLI with stderr folded into the captured output.
Run cli(const std::string& args) {
  const std::string cmd = "'" + env("NFORGE_CLI") + "' " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string config(const std::string& name) {
  return "'" + env("NFORGE_SOURCE_DIR") + "/configs/" + name + "'";
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("nforge_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const auto path = dir / "run.cfg";
  std::ofstream(path) << text;
  return path;
}

const std::string kSmall =
    "dataset = synthetic_classification\nsynth_samples = 200\nsynth_features = 5\n"
    "synth_classes = 3\nsynth_seed = 9\narch = 5:8tanh:3softmax:cross_entropy\n"
    "optimizer = newton_cg\nlearning_rate = 0.5\ntau = 30\nbatch_size = 16\nepochs = 3\n";

}  // namespace

TEST_CASE("cli: usage errors exit 1, help exits 0") {
  CHECK(cli("").code == 1);
  CHECK(cli("frobnicate x").code == 1);
  CHECK(cli("train").code == 1);
  const Run help = cli("--help");
  CHECK(help.code == 0);
  CHECK(help.out.find("benchmark") != std::string::npos);
  CHECK(cli("train --help").out.find("--seed-shuffle") != std::string::npos);
}

TEST_CASE("cli: train writes metrics, model and summary") {
  const auto out = scratch("train");
  const Run r = cli("train " + config("classification_newton.cfg") + " --out '" + out.string() + "'");
  CHECK_MESSAGE(r.code == 0, r.out);
  const std::string metrics = slurp(out / "metrics.csv");
  CHECK(metrics.rfind("step,epoch,loss,accuracy,grad_norm,cg_iterations,fallback_used,wall_ms\n", 0) == 0);
  // 1800 training rows, batch 32 -> 57 steps per epoch, 10 epochs.
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 1 + 570);
  const auto model = nforge::load_model((out / "model.nfm").string());
  CHECK(model.network.arch() == "20:32tanh:4softmax:cross_entropy");
  const std::string summary = slurp(out / "summary.txt");
  CHECK(summary.find("status = ok") != std::string::npos);
  CHECK(summary.find("final_loss = ") != std::string::npos);
  CHECK(summary.find("final_accuracy = ") != std::string::npos);
}

TEST_CASE("cli: zero epochs writes the header and the initial model") {
  const auto dir = scratch("zero");
  std::string text = kSmall;
  text.replace(text.find("epochs = 3"), 10, "epochs = 0");
  write_config(dir, text + "seed_init = 17\nout_dir = out\n");
  const Run r = cli("train '" + (dir / "run.cfg").string() + "'");
  CHECK_MESSAGE(r.code == 0, r.out);
  CHECK(slurp(dir / "out" / "metrics.csv") ==
        "step,epoch,loss,accuracy,grad_norm,cg_iterations,fallback_used,wall_ms\n");
  const auto model = nforge::load_model((dir / "out" / "model.nfm").string());
  CHECK(model.weights == nforge::init_weights(model.network, 17));
}

TEST_CASE("cli: identical runs are byte-identical for k = 1 and k = 4") {
  const auto dir = scratch("determinism");
  write_config(dir, kSmall);
  for (const char* k : {"1", "4"}) {
    const std::string base = "train '" + (dir / "run.cfg").string() + "' --workers " + k;
    REQUIRE(cli(base + " --out '" + (dir / "a").string() + "'").code == 0);
    REQUIRE(cli(base + " --out '" + (dir / "b").string() + "'").code == 0);
    CHECK(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"));
    CHECK(slurp(dir / "a" / "model.nfm") == slurp(dir / "b" / "model.nfm"));
  }
}

TEST_CASE("cli: seed and shuffle overrides change the trajectory") {
  const auto dir = scratch("overrides");
  write_config(dir, kSmall);
  const std::string base = "train '" + (dir / "run.cfg").string() + "'";
  REQUIRE(cli(base + " --out '" + (dir / "base").string() + "'").code == 0);
  REQUIRE(cli(base + " --seed-shuffle 99 --out '" + (dir / "shuffle").string() + "'").code == 0);
  REQUIRE(cli(base + " --seed-init 99 --out '" + (dir / "init").string() + "'").code == 0);
  REQUIRE(cli(base + " --no-shuffle --out '" + (dir / "plain").string() + "'").code == 0);
  const std::string m = slurp(dir / "base" / "metrics.csv");
  CHECK(m != slurp(dir / "shuffle" / "metrics.csv"));
  CHECK(m != slurp(dir / "init" / "metrics.csv"));
  CHECK(m != slurp(dir / "plain" / "metrics.csv"));
}

TEST_CASE("cli: config errors exit 1 and name the problem") {
  const auto dir = scratch("bad");
  write_config(dir, kSmall + "colour = red\n");
  Run r = cli("train '" + (dir / "run.cfg").string() + "'");
  CHECK(r.code == 1);
  CHECK(r.out.find("colour") != std::string::npos);
  r = cli("train '" + (dir / "missing.cfg").string() + "'");
  CHECK(r.code == 1);
  CHECK(r.out.find("cannot open") != std::string::npos);
  write_config(dir, kSmall + "dataset = csv\n");
  CHECK(cli("check '" + (dir / "run.cfg").string() + "'").code == 1);
}

TEST_CASE("cli: divergence exits 2") {
  const auto dir = scratch("diverge");
  write_config(dir,
               "synth_samples = 64\nsynth_features = 3\narch = 3:4tanh:1identity:sse\n"
               "optimizer = sgd\nlearning_rate = 1e6\nepochs = 3\nbatch_size = 8\nout_dir = out\n");
  const Run r = cli("train '" + (dir / "run.cfg").string() + "'");
  CHECK(r.code == 2);
  CHECK(r.out.find("diverged") != std::string::npos);
  CHECK(slurp(dir / "out" / "summary.txt").find("status = diverged") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out" / "model.nfm"));
}

TEST_CASE("cli: check passes on the tiny MLP and fails under a corrupted adjoint") {
  Run r = cli("check " + config("check_tiny.cfg"));
  CHECK_MESSAGE(r.code == 0, r.out);
  CHECK(r.out.find("FAIL") == std::string::npos);
  r = cli("check " + config("check_tiny.cfg") + " --corrupt-adjoint");
  CHECK(r.code == 3);
  CHECK(r.out.find("check failed: gradient vs finite differences") != std::string::npos);
  r = cli("check " + config("check_quadratic.cfg"));
  CHECK(r.code == 0);
  CHECK(r.out.find("hvp vs analytic hessian (quadratic)") != std::string::npos);
  CHECK(r.out.find("skip") == std::string::npos);
}

TEST_CASE("cli: benchmark with one worker") {
  const auto dir = scratch("bench");
  write_config(dir, kSmall + "worker_counts = 1\n");
  const Run r = cli("benchmark '" + (dir / "run.cfg").string() + "' --out '" + dir.string() + "'");
  CHECK_MESSAGE(r.code == 0, r.out);
  CHECK(r.out.find("parallel efficiency | 100%") != std::string::npos);
  const std::string csv = slurp(dir / "scaling.csv");
  CHECK(csv.rfind("workers,wall_seconds,parallel_efficiency\n1,", 0) == 0);
  CHECK(csv.find(",1.000000\n") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
  write_config(dir, kSmall + "worker_counts = 2, 4\n");
  CHECK(cli("benchmark '" + (dir / "run.cfg").string() + "'").code == 1);
}
