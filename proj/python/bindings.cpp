#include "swindle/diagnostics.hpp"
#include "swindle/errors.hpp"
#include "swindle/experiment.hpp"
#include "swindle/integrator.hpp"
#include "swindle/samplers.hpp"
#include "swindle/swindles.hpp"
#include "swindle/targets.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace swindle;

namespace {

// Wraps a Python object exposing potential(x) and gradient(x).
class PyTarget final : public TargetDensity {
 public:
  PyTarget(py::object obj, Eigen::Index dim) : obj_(std::move(obj)), dim_(dim) {}
  Eigen::Index dimension() const override { return dim_; }
  std::string name() const override { return "python"; }
  double potential(const Vector& x) const override {
    py::gil_scoped_acquire gil;
    return obj_.attr("potential")(x).cast<double>();
  }
  Vector gradient(const Vector& x) const override {
    py::gil_scoped_acquire gil;
    return obj_.attr("gradient")(x).cast<Vector>();
  }

 private:
  py::object obj_;
  Eigen::Index dim_;
};

KernelConfig make_kernel(const std::string& kind, double step_size, int leapfrog_steps, int steps,
                         int burn_in) {
  KernelConfig k;
  k.kind = kernel_kind_from_string(kind);
  k.leapfrog = {step_size, leapfrog_steps};
  k.step_size = step_size;
  k.steps = steps;
  k.burn_in = burn_in;
  k.validate();
  return k;
}

}  // namespace

PYBIND11_MODULE(_swindle, m) {
  m.doc() = "Coupled-chain variance reduction for Hamiltonian Monte Carlo";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<TargetDensity, std::shared_ptr<TargetDensity>>(m, "Target")
      .def_property_readonly("dimension", [](const TargetDensity& t) { return t.dimension(); })
      .def_property_readonly("name", &TargetDensity::name)
      .def("potential", [](const TargetDensity& t, const Vector& x) { return potential(t, x); })
      .def("gradient", [](const TargetDensity& t, const Vector& x) { return grad_potential(t, x); });

  py::class_<GaussianDensity, TargetDensity, std::shared_ptr<GaussianDensity>>(m, "Gaussian")
      .def(py::init([](const Vector& mean, const Matrix& cov) {
             return GaussianDensity::from_covariance(mean, cov);
           }),
           py::arg("mean"), py::arg("covariance"))
      .def_static("standard", &GaussianDensity::standard)
      .def_property_readonly("mean", &GaussianDensity::mean)
      .def_property_readonly("covariance", &GaussianDensity::covariance);

  py::class_<LogisticRegressionDensity, TargetDensity, std::shared_ptr<LogisticRegressionDensity>>(
      m, "LogisticRegression")
      .def(py::init<Matrix, Vector>(), py::arg("design"), py::arg("labels"));

  m.def(
      "python_target",
      [](py::object obj, Eigen::Index dim) -> std::shared_ptr<TargetDensity> {
        return std::make_shared<PyTarget>(std::move(obj), dim);
      },
      py::arg("obj"), py::arg("dimension"),
      "Target backed by an object with potential(x) and gradient(x) methods.");

  py::class_<ChainTrace>(m, "ChainTrace")
      .def_readonly("samples", &ChainTrace::samples)
      .def_readonly("accepted", &ChainTrace::accepted)
      .def_readonly("gradient_evals", &ChainTrace::gradient_evals)
      .def("acceptance_rate", &ChainTrace::acceptance_rate, py::arg("start") = 0);

  py::class_<CoupledTraces>(m, "CoupledTraces")
      .def_readonly("primary", &CoupledTraces::primary)
      .def_readonly("control", &CoupledTraces::control)
      .def_readonly("antithetic", &CoupledTraces::antithetic)
      .def_readonly("reflected_control", &CoupledTraces::reflected_control)
      .def_readonly("target_gradient_evals", &CoupledTraces::target_gradient_evals)
      .def_readonly("surrogate_gradient_evals", &CoupledTraces::surrogate_gradient_evals);

  m.def(
      "run_chain",
      [](const TargetDensity& target, const Vector& x0, const std::string& kernel, double step_size,
         int leapfrog_steps, int steps, std::uint64_t seed) {
        py::gil_scoped_release release;
        return run_chain(target, x0, make_kernel(kernel, step_size, leapfrog_steps, steps, 0), seed);
      },
      py::arg("target"), py::arg("x0"), py::arg("kernel") = "hmc", py::arg("step_size") = 0.1,
      py::arg("leapfrog_steps") = 10, py::arg("steps") = 1000, py::arg("seed") = 0);

  m.def(
      "run_cva",
      [](const TargetDensity& target, const TargetDensity& surrogate, const Vector& x0_plus,
         const Vector& x0_minus, const Vector& y0_plus, const std::string& kernel, double step_size,
         int leapfrog_steps, int steps, std::uint64_t seed) {
        py::gil_scoped_release release;
        return run_cva(target, surrogate, x0_plus, x0_minus, y0_plus,
                       make_kernel(kernel, step_size, leapfrog_steps, steps, 0), seed);
      },
      py::arg("target"), py::arg("surrogate"), py::arg("x0_plus"), py::arg("x0_minus"),
      py::arg("y0_plus"), py::arg("kernel") = "hmc", py::arg("step_size") = 0.1,
      py::arg("leapfrog_steps") = 10, py::arg("steps") = 1000, py::arg("seed") = 0);

  m.def(
      "ess", [](const std::vector<Matrix>& chains) { return ess(chains).ess; }, py::arg("chains"),
      "Multi-chain effective sample size per component.");
  m.def("rhat", &rhat, py::arg("chains"));
  m.def(
      "control_variate_chain",
      [](const Matrix& fx, const Matrix& fy, const Vector& surrogate_mean, bool diagonal) {
        BetaOptions opts;
        opts.diagonal_only = diagonal;
        ControlVariateFit fit = estimate_beta(fx, fy, opts);
        SurrogateExpectation e;
        e.mean = surrogate_mean;
        e.closed_form = true;
        fit.expectation = e;
        return control_variate_chain(fx, fy, fit);
      },
      py::arg("fx"), py::arg("fy"), py::arg("surrogate_mean"), py::arg("diagonal") = false);
  m.def("predict_vr_ess", [](double ess_hmc, double rho, const std::string& kind) {
    if (kind == "control") return predict_vr_ess(ess_hmc, rho, VarianceReduction::control);
    if (kind == "antithetic") return predict_vr_ess(ess_hmc, rho, VarianceReduction::antithetic);
    throw ConfigError("kind must be 'control' or 'antithetic'");
  });

  m.def(
      "run_command",
      [](const std::string& command, const std::string& config, const std::string& out,
         std::optional<std::uint64_t> seed) {
        py::gil_scoped_release release;
        return run_command(command, config, out, {seed, std::nullopt});
      },
      py::arg("command"), py::arg("config"), py::arg("out"), py::arg("seed") = py::none(),
      "Runs a CLI subcommand in-process and returns its exit code.");
}
