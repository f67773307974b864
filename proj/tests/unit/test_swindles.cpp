#include "doctest.h"

#include "oracles.hpp"
#include "swindle/errors.hpp"
#include "swindle/swindles.hpp"

#include <cmath>
#include <vector>

using namespace swindle;

namespace {

Matrix noise(Eigen::Index n, Eigen::Index k, std::uint64_t seed, double scale = 1.0) {
  CounterRng rng(seed);
  Matrix m(n, k);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < k; ++j) m(i, j) = scale * rng.normal();
  return m;
}

KernelConfig hmc(double eps, int l, int steps, int burn) {
  KernelConfig cfg;
  cfg.leapfrog = {eps, l};
  cfg.steps = steps;
  cfg.burn_in = burn;
  return cfg;
}

}  // namespace

TEST_CASE("beta regression oracles") {
  const Matrix fy = noise(500, 3, 1);
  const auto self = estimate_beta(fy, fy);
  CHECK((self.beta - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(self.residual_variance.maxCoeff() < 1e-10);

  const Matrix indep = noise(500, 3, 2);
  const auto null_fit = estimate_beta(indep, fy);
  CHECK((null_fit.beta.array().abs() < 3.0 * null_fit.beta_stderr.array()).all());

  const Matrix fx = 2.0 * fy + noise(500, 3, 3, 0.1);
  const auto two = estimate_beta(fx, fy);
  CHECK((two.beta.diagonal().array() - 2.0).abs().maxCoeff() < 0.1);
  CHECK((two.residual_variance.array() <= two.regressand_variance.array()).all());

  const auto diag = estimate_beta(fx, fy, {.diagonal_only = true});
  CHECK((diag.beta - Matrix(diag.beta.diagonal().asDiagonal())).norm() == 0.0);
  CHECK_THROWS_AS(estimate_beta(noise(4, 3, 1), noise(4, 3, 2)), InsufficientDataError);
  CHECK_THROWS_AS(estimate_beta(noise(10, 3, 1), noise(10, 2, 2)), ContractError);
}

TEST_CASE("collinear regressors stay finite under ridge damping") {
  Matrix fy = noise(100, 2, 4);
  fy.col(1) = fy.col(0);
  const auto fit = estimate_beta(fy, fy);
  CHECK(fit.beta.allFinite());
  CHECK(fit.residual_variance.maxCoeff() < 1e-6);
}

TEST_CASE("control variate chain") {
  const Matrix fx = noise(50, 2, 5);
  ControlVariateFit zero;
  zero.beta = Matrix::Zero(2, 2);
  zero.expectation = SurrogateExpectation{Vector::Zero(2), Vector::Zero(2), true, 0};
  CHECK(control_variate_chain(fx, noise(50, 2, 6), zero) == fx);

  ControlVariateFit id;
  id.beta = Matrix::Identity(2, 2);
  const Vector mean = fx.colwise().mean();
  id.expectation = SurrogateExpectation{mean, Vector::Zero(2), true, 0};
  const Matrix z = control_variate_chain(fx, fx, id);
  CHECK((z.rowwise() - mean.transpose()).cwiseAbs().maxCoeff() < 1e-15);

  ControlVariateFit missing;
  missing.beta = Matrix::Identity(2, 2);
  CHECK_THROWS_AS(control_variate_chain(fx, fx, missing), ContractError);
  CHECK_THROWS_AS(control_variate_chain(fx, noise(49, 2, 1), id), ContractError);
}

TEST_CASE("antithetic average") {
  const Matrix a = noise(80, 2, 7);
  const auto same = antithetic_average(a, a);
  CHECK(same.average == a);
  CHECK((same.correlation.array() - 1.0).abs().maxCoeff() < 1e-12);
  const auto opposite = antithetic_average(a, -a);
  CHECK(opposite.average.cwiseAbs().maxCoeff() == 0.0);
  CHECK((opposite.correlation.array() + 1.0).abs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(antithetic_average(a, noise(80, 3, 1)), ContractError);
}

TEST_CASE("surrogate expectations") {
  const Matrix cov = (Matrix(2, 2) << 2.0, 0.3, 0.3, 0.5).finished();
  const Vector mu = (Vector(2) << 1.0, -1.0).finished();
  const auto q = GaussianDensity::from_covariance(mu, cov);
  const auto id = TransportMap::identity(2);
  const auto m = surrogate_expectation(q, id, FunctionOfState::mean(2), 1000, 1);
  CHECK(m.closed_form);
  CHECK(m.mean == mu);

  const auto centered = GaussianDensity::from_covariance(Vector::Zero(2), cov);
  const auto sq = surrogate_expectation(centered, id, FunctionOfState::centered_square(Vector::Zero(2)),
                                        1000, 1);
  CHECK((sq.mean - cov.diagonal()).norm() < 1e-14);

  // Latent standard normal pushed through a map equals the Gaussian above.
  const TransportMap map(q.scale_lower(), mu);
  const auto through = surrogate_expectation(GaussianDensity::standard(2), map,
                                             FunctionOfState::centered_square(mu), 1000, 1);
  CHECK((through.mean - cov.diagonal()).norm() < 1e-12);

  Matrix rows(3, 2);
  rows << 0.5, -0.2, 1.0, 1.0, -0.3, 0.8;
  const auto pred = FunctionOfState::predictive(rows);
  const auto a = surrogate_expectation(q, id, pred, 1000000, 11);
  const auto b = surrogate_expectation(q, id, pred, 1000000, 12);
  CHECK_FALSE(a.closed_form);
  CHECK(a.draws == 1000000);
  for (int k = 0; k < 3; ++k) {
    CHECK(std::abs(a.mean[k] - b.mean[k]) <
          4.0 * std::hypot(a.standard_error[k], b.standard_error[k]));
  }
  CHECK_THROWS_AS(surrogate_expectation(q, id, pred, 999, 1), ContractError);
}

TEST_CASE("control variate variance identity on a coupled gaussian pair") {
  const auto p = GaussianDensity::diagonal(Vector::Constant(3, 0.3), Vector::LinSpaced(3, 0.8, 1.3));
  const auto q = GaussianDensity::standard(3);
  const auto cfg = hmc(0.35, 4, 1500, 500);
  std::vector<CoupledTraces> groups;
  CounterRng init(1, 0, StreamTag::initial_state);
  for (std::uint64_t c = 0; c < 4; ++c) {
    const Vector x0 = init.normal_vector(3);
    groups.push_back(run_coupled(p, q, x0, x0, CouplingMode::shared, cfg, derive_seed(50, c)));
  }
  const auto f = FunctionOfState::mean(3);
  const auto e = surrogate_expectation(q, TransportMap::identity(3), f, 1000, 1);
  SwindleOptions opts;
  opts.burn_in = cfg.burn_in;
  const auto est = swindle_estimate(EstimatorKind::control, groups, f, e, opts);
  for (int j = 0; j < 3; ++j) {
    const double predicted = 1.0 - est.rho[j] * est.rho[j];
    CHECK(1.0 / est.vr_factor[j] == doctest::Approx(predicted).epsilon(0.30));
  }
  CHECK(est.grads_used == 4 * (1 + 1500 * 4));
  CHECK(est.surrogate_grads == 4 * (1 + 1500 * 4));
}

TEST_CASE("cva with surrogate equal to target is exact") {
  const auto q = GaussianDensity::diagonal(Vector::Constant(2, 0.5), Vector::Ones(2));
  const auto cfg = hmc(0.4, 3, 300, 100);
  const Vector x0 = (Vector(2) << 1.2, -0.4).finished();
  const Vector xm = 2.0 * q.mean() - x0;
  const auto traces = run_cva(q, q, x0, xm, x0, cfg, 3);
  const auto f = FunctionOfState::mean(2);
  ControlVariateFit fit;
  fit.beta = Matrix::Identity(2, 2);
  fit.expectation = surrogate_expectation(q, TransportMap::identity(2), f, 1000, 1);
  const auto est = cva_estimate(traces, f, fit, cfg.burn_in);
  CHECK((est.estimates - q.mean()).norm() < 1e-12);
  CHECK((est.z_chains[0].rowwise() - q.mean().transpose()).cwiseAbs().maxCoeff() < 1e-12);

  CoupledTraces partial = traces;
  partial.reflected_control.reset();
  CHECK_THROWS_AS(cva_estimate(partial, f, fit), ConfigError);
}

TEST_CASE("even functionals gain nothing from perfect anti-coupling") {
  const auto q = GaussianDensity::standard(2);
  const auto cfg = hmc(0.4, 3, 400, 200);
  const Vector x0 = (Vector(2) << 1.2, -0.4).finished();
  const auto traces = run_cva(q, q, x0, -x0, x0, cfg, 4);
  // After coupling X- = -X+, so an even f gives identical plus and minus chains.
  const auto f = FunctionOfState::centered_square(Vector::Zero(2));
  const Matrix fp = f.evaluate_rows(traces.primary.post_burn_in(200));
  const Matrix fm = f.evaluate_rows(traces.antithetic->post_burn_in(200));
  CHECK((fp - fm).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("unbiased at fixed beta with exact expectation") {
  const auto p = GaussianDensity::diagonal(Vector::Constant(2, 0.4), Vector::Constant(2, 1.2));
  const auto q = GaussianDensity::standard(2);
  const auto cfg = hmc(0.4, 4, 400, 100);
  const auto f = FunctionOfState::mean(2);
  ControlVariateFit fixed;
  fixed.beta = 0.8 * Matrix::Identity(2, 2);
  SwindleOptions opts;
  opts.burn_in = cfg.burn_in;
  opts.held_out_fit = fixed;
  const auto e = surrogate_expectation(q, TransportMap::identity(2), f, 1000, 1);
  std::vector<double> estimates;
  for (std::uint64_t r = 0; r < 40; ++r) {
    CounterRng init(r, 0, StreamTag::initial_state);
    const Vector x0 = q.transform(init.normal_vector(2));
    std::vector<CoupledTraces> groups{
        run_coupled(p, q, x0, x0, CouplingMode::shared, cfg, derive_seed(900, r))};
    estimates.push_back(swindle_estimate(EstimatorKind::control, groups, f, e, opts).estimates[0]);
  }
  const Vector v = Eigen::Map<Vector>(estimates.data(), 40);
  const double se = std::sqrt(oracle::sample_variance(v) / 40.0);
  CHECK(std::abs(v.mean() - 0.4) < 4.0 * se);
}

TEST_CASE("cva variance ordering on a gaussian") {
  const auto p = GaussianDensity::diagonal(Vector::Constant(3, 0.2), Vector::LinSpaced(3, 0.9, 1.2));
  const auto q = GaussianDensity::standard(3);
  const auto cfg = hmc(0.35, 4, 1500, 500);
  std::vector<CoupledTraces> groups;
  for (std::uint64_t c = 0; c < 3; ++c) {
    CounterRng init(c, 0, StreamTag::initial_state);
    const Vector x0 = init.normal_vector(3);
    groups.push_back(run_cva(p, q, x0, -x0, x0, cfg, derive_seed(70, c)));
  }
  const auto f = FunctionOfState::mean(3);
  const auto e = surrogate_expectation(q, TransportMap::identity(3), f, 1000, 1);
  SwindleOptions opts;
  opts.burn_in = cfg.burn_in;
  const auto plain = swindle_estimate(EstimatorKind::plain, groups, f, e, opts);
  const auto control = swindle_estimate(EstimatorKind::control, groups, f, e, opts);
  const auto cva = swindle_estimate(EstimatorKind::cva, groups, f, e, opts);
  const auto anti = swindle_estimate(EstimatorKind::antithetic, groups, f, e, opts);
  const Vector vp = pooled_variance(plain.z_chains);
  const Vector vc = pooled_variance(control.z_chains);
  const Vector vv = pooled_variance(cva.z_chains);
  const Vector va = pooled_variance(anti.z_chains);
  CHECK((vc.array() < vp.array()).all());
  // Antithetic pairs are exact for a Gaussian mean, so compare above roundoff.
  CHECK((vv.array() <= vc.array().min(va.array()) + 1e-20).all());
  CHECK(plain.grads_used == 3 * (1 + 1500 * 4));
  CHECK(cva.grads_used == 2 * plain.grads_used);
  CHECK(plain.rho.isZero());

  const auto text = cva.to_json();
  for (const char* key : {"\"kind\"", "\"estimates\"", "\"rho\"", "\"vr_factor\"", "\"ess\"",
                          "\"grads_used\""}) {
    CHECK(text.find(key) != std::string::npos);
  }
  CHECK_THROWS_AS(swindle_estimate(EstimatorKind::control, groups, f, std::nullopt, opts),
                  ConfigError);
  CHECK(estimator_kind_from_string("cva") == EstimatorKind::cva);
  CHECK_THROWS_AS(estimator_kind_from_string("mlmc"), ConfigError);
}
