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


// Python bindings. Matrices cross as float64 numpy arrays.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "newton_forge/error.hpp"
#include "newton_forge/runner.hpp"

namespace py = pybind11;
using namespace nforge;

namespace {

py::dict report_dict(const StepReport& r) {
  py::dict d;
  d["loss_before"] = r.loss_before;
  d["grad_norm"] = r.grad_norm;
  d["cg_iterations"] = r.cg_iterations;
  d["cg_termination"] =
      r.cg_termination ? py::object(py::str(std::string(to_string(*r.cg_termination))))
                       : py::object(py::none());
  d["fallback_used"] = r.fallback_used;
  d["direction_dot_grad"] = r.direction_dot_grad;
  d["reverse_sweeps"] = r.reverse_sweeps;
  return d;
}

Batch make_batch(const Matrix& features, const Matrix& targets) { return {features, targets}; }

template <typename Fn>
py::tuple capture(Fn&& fn) {
  std::ostringstream out, err;
  int code;
  {
    py::gil_scoped_release release;
    code = fn(out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Newton-CG, SGD and Adam for feed-forward networks";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<NonFiniteError>(m, "NonFiniteError", base.ptr());

  py::class_<Network>(m, "Network")
      .def_property_readonly("input_dim", &Network::input_dim)
      .def_property_readonly("output_dim", &Network::output_dim)
      .def_property_readonly("weight_count", &Network::weight_count)
      .def_property_readonly("arch", &Network::arch)
      .def("__repr__", [](const Network& n) { return "Network('" + n.arch() + "')"; });
  m.def("parse_arch", &parse_arch, py::arg("arch"),
        "Network from '<input_dim>:<width><activation>:...:<loss>'.");
  m.def("init_weights", &init_weights, py::arg("network"), py::arg("seed"));

  m.def("loss", [](const Network& n, const Vector& w, const Matrix& x, const Matrix& y) {
    return loss_value(n, w, make_batch(x, y));
  }, py::arg("network"), py::arg("weights"), py::arg("features"), py::arg("targets"));
  m.def("gradient", [](const Network& n, const Vector& w, const Matrix& x, const Matrix& y) {
    const Batch b = make_batch(x, y);
    const auto vg = autodiff::value_and_gradient(NetworkObjective(n, b), w);
    return py::make_tuple(vg.loss, vg.gradient);
  }, py::arg("network"), py::arg("weights"), py::arg("features"), py::arg("targets"),
        "(loss, gradient) with one reverse sweep.");
  m.def("hvp", [](const Network& n, const Vector& w, const Matrix& x, const Matrix& y,
                  const Vector& s) { return hvp(n, w, make_batch(x, y), s); },
        py::arg("network"), py::arg("weights"), py::arg("features"), py::arg("targets"),
        py::arg("direction"), "Hessian-vector product by Pearlmutter's double sweep.");
  m.def("predict", &predict, py::arg("network"), py::arg("weights"), py::arg("features"));
  m.def("accuracy", [](const Network& n, const Vector& w, const Matrix& x, const Matrix& y) {
    return accuracy(n, w, make_batch(x, y));
  }, py::arg("network"), py::arg("weights"), py::arg("features"), py::arg("targets"));
  m.def("save_model", py::overload_cast<const std::string&, const Network&, const WeightVector&>(
                          &save_model),
        py::arg("path"), py::arg("network"), py::arg("weights"));
  m.def("load_model", [](const std::string& path) {
    Model model = load_model(path);
    return py::make_tuple(model.network, model.weights);
  }, py::arg("path"));

  m.def("cg_solve", [](const std::function<Vector(const Vector&)>& matvec, const Vector& b,
                       double tol, std::size_t max_iter) {
    const CGResult r = cg_solve(matvec, b, tol, max_iter);
    return py::make_tuple(r.solution, r.iterations, r.residual_norm,
                          std::string(to_string(r.termination)));
  }, py::arg("matvec"), py::arg("b"), py::arg("tol"), py::arg("max_iter"),
        "(solution, iterations, residual_norm, termination)");

  py::class_<NewtonCGConfig>(m, "NewtonCGConfig")
      .def(py::init([](double lr, double tau, double cg_tol, std::size_t max_iter) {
             NewtonCGConfig c{lr, tau, cg_tol, max_iter};
             c.validate();
             return c;
           }),
           py::arg("learning_rate") = 0.01, py::arg("tau") = 1.0, py::arg("cg_tol") = 1e-4,
           py::arg("max_iter") = 20)
      .def_readwrite("learning_rate", &NewtonCGConfig::learning_rate)
      .def_readwrite("tau", &NewtonCGConfig::tau)
      .def_readwrite("cg_tol", &NewtonCGConfig::cg_tol)
      .def_readwrite("max_iter", &NewtonCGConfig::max_iter);
  py::class_<AdamConfig>(m, "AdamConfig")
      .def(py::init([](double lr, double b1, double b2, double delta) {
             AdamConfig c{lr, b1, b2, delta};
             c.validate();
             return c;
           }),
           py::arg("learning_rate") = 0.001, py::arg("beta1") = 0.9, py::arg("beta2") = 0.999,
           py::arg("delta") = 1e-8);
  py::class_<AdamState>(m, "AdamState")
      .def(py::init([](std::size_t n) { return AdamState::zeros(n); }), py::arg("n"))
      .def_readonly("s", &AdamState::s)
      .def_readonly("r", &AdamState::r)
      .def_readonly("k", &AdamState::k);

  m.def("sgd_step", &sgd_step, py::arg("weights"), py::arg("grad"), py::arg("lr"));
  m.def("adam_step", &adam_step, py::arg("state"), py::arg("config"), py::arg("weights"),
        py::arg("grad"), "Advances `state` in place and returns the new weights.");
  m.def("newton_cg_step", [](const Network& n, const Vector& w, const Matrix& x,
                             const Matrix& y, const NewtonCGConfig& cfg) {
    const NewtonStep step = newton_cg_step(n, w, make_batch(x, y), cfg);
    return py::make_tuple(step.weights, step.direction, report_dict(step.report));
  }, py::arg("network"), py::arg("weights"), py::arg("features"), py::arg("targets"),
        py::arg("config"), "(new_weights, direction, report)");

  m.def("synth_regression", [](std::uint64_t seed, std::size_t n, std::size_t d, double noise) {
    const Dataset ds = synth_regression(seed, n, d, noise);
    return py::make_tuple(ds.features, ds.targets);
  }, py::arg("seed"), py::arg("n"), py::arg("d_in"), py::arg("noise_sd"));
  m.def("synth_classification", [](std::uint64_t seed, std::size_t n, std::size_t d,
                                   std::size_t classes) {
    const Dataset ds = synth_classification(seed, n, d, classes);
    return py::make_tuple(ds.features, ds.targets);
  }, py::arg("seed"), py::arg("n"), py::arg("d_in"), py::arg("classes"));
  m.def("load_csv", [](const std::string& path, const std::vector<std::string>& targets,
                       bool standardize) {
    const Dataset ds = load_csv(path, targets, standardize);
    return py::make_tuple(ds.features, ds.targets);
  }, py::arg("path"), py::arg("targets"), py::arg("standardize") = false);
  m.def("epoch_order", &epoch_order, py::arg("n"), py::arg("epoch"), py::arg("seed"),
        py::arg("shuffle") = true);

  m.def("parallel_efficiency", [](const std::vector<std::size_t>& workers,
                                  const std::vector<double>& seconds) {
    std::vector<double> out;
    for (const auto& r : scaling_records(workers, seconds)) out.push_back(r.parallel_efficiency);
    return out;
  }, py::arg("workers"), py::arg("seconds"));
  m.def("format_efficiency", &format_efficiency, py::arg("efficiency"));
  m.def("format_scaling_table", [](const std::vector<std::size_t>& workers,
                                   const std::vector<double>& seconds) {
    return format_scaling_table(scaling_records(workers, seconds));
  }, py::arg("workers"), py::arg("seconds"));

  auto overrides = [](std::optional<std::uint64_t> seed_init,
                      std::optional<std::uint64_t> seed_shuffle,
                      std::optional<std::size_t> workers, bool no_shuffle,
                      std::optional<std::string> out_dir) {
    return Overrides{seed_init, seed_shuffle, workers, no_shuffle, std::move(out_dir)};
  };
#define NFORGE_OVERRIDE_ARGS                                                          \
  py::kw_only(), py::arg("seed_init") = py::none(), py::arg("seed_shuffle") = py::none(), \
      py::arg("workers") = py::none(), py::arg("no_shuffle") = false,                     \
      py::arg("out") = py::none()
  m.def("train", [=](const std::string& cfg, std::optional<std::uint64_t> si,
                     std::optional<std::uint64_t> ss, std::optional<std::size_t> k, bool ns,
                     std::optional<std::string> out) {
    const Overrides ov = overrides(si, ss, k, ns, out);
    return capture([&](std::ostream& o, std::ostream& e) { return cmd_train(cfg, ov, o, e); });
  }, py::arg("config"), NFORGE_OVERRIDE_ARGS, "Same as `newton-forge train`: (exit, stdout, stderr).");
  m.def("check", [=](const std::string& cfg, std::optional<std::uint64_t> si,
                     std::optional<std::uint64_t> ss, std::optional<std::size_t> k, bool ns,
                     std::optional<std::string> out) {
    const Overrides ov = overrides(si, ss, k, ns, out);
    return capture(
        [&](std::ostream& o, std::ostream& e) { return cmd_check(cfg, ov, {}, o, e); });
  }, py::arg("config"), NFORGE_OVERRIDE_ARGS, "Same as `newton-forge check`: (exit, stdout, stderr).");
  m.def("benchmark", [=](const std::string& cfg, std::optional<std::uint64_t> si,
                         std::optional<std::uint64_t> ss, std::optional<std::size_t> k, bool ns,
                         std::optional<std::string> out) {
    const Overrides ov = overrides(si, ss, k, ns, out);
    return capture(
        [&](std::ostream& o, std::ostream& e) { return cmd_benchmark(cfg, ov, o, e); });
  }, py::arg("config"), NFORGE_OVERRIDE_ARGS,
        "Same as `newton-forge benchmark`: (exit, stdout, stderr).");
#undef NFORGE_OVERRIDE_ARGS
}
