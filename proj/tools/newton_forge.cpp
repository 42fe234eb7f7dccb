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


// newton-forge: train, check and benchmark feed-forward networks from a flat
// key = value config file.

#include <CLI11.hpp>

#include <iostream>

#include "newton_forge/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Newton-CG, SGD and Adam training for feed-forward networks"};
  app.require_subcommand(1);

  nforge::Overrides ov;
  std::string config_path;
  bool corrupt_adjoint = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "run config file")->required();
    sub->add_option_function<std::uint64_t>(
        "--seed-init", [&](std::uint64_t v) { ov.seed_init = v; }, "weight init seed");
    sub->add_option_function<std::uint64_t>(
        "--seed-shuffle", [&](std::uint64_t v) { ov.seed_shuffle = v; }, "epoch shuffle seed");
    sub->add_option_function<std::size_t>(
        "--workers", [&](std::size_t v) { ov.workers = v; },
        "data-parallel workers (benchmark: compares 1 and this count)");
    sub->add_flag("--no-shuffle", ov.no_shuffle, "visit samples in file order every epoch");
    sub->add_option_function<std::string>(
        "--out", [&](const std::string& v) { ov.out_dir = v; }, "output directory");
  };

  auto* train = app.add_subcommand("train", "train and write metrics.csv, model.nfm, summary.txt");
  auto* check = app.add_subcommand("check", "verify gradients, Hessian-vector products and CG");
  auto* bench = app.add_subcommand("benchmark", "time one epoch per worker count");
  for (auto* sub : {train, check, bench}) add_common(sub);
  // Negative control for the gradient check; intentionally undocumented.
  check->add_flag("--corrupt-adjoint", corrupt_adjoint)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? nforge::kExitOk : nforge::kExitConfig;
  }

  if (train->parsed()) return nforge::cmd_train(config_path, ov, std::cout, std::cerr);
  if (check->parsed()) {
    return nforge::cmd_check(config_path, ov, {corrupt_adjoint}, std::cout, std::cerr);
  }
  return nforge::cmd_benchmark(config_path, ov, std::cout, std::cerr);
}
