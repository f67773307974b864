#include "doctest.h"

#include "oracles.hpp"
#include "swindle/data_io.hpp"
#include "swindle/errors.hpp"
#include "swindle/preconditioner.hpp"

#include <cmath>
#include <limits>
#include <memory>

using namespace swindle;

namespace {

Matrix random_spd(Eigen::Index d, std::uint64_t seed) {
  CounterRng rng(seed);
  Matrix m(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rng.normal();
  return m * m.transpose() / static_cast<double>(d) + 0.5 * Matrix::Identity(d, d);
}

TransportMap random_map(Eigen::Index d, std::uint64_t seed) {
  const Matrix l = random_spd(d, seed).llt().matrixL();
  CounterRng rng(seed + 1);
  return TransportMap(l, rng.normal_vector(d));
}

class Poisoned final : public TargetDensity {
 public:
  Eigen::Index dimension() const override { return 2; }
  std::string name() const override { return "poisoned"; }
  double potential(const Vector&) const override {
    return std::numeric_limits<double>::quiet_NaN();
  }
  Vector gradient(const Vector&) const override { return Vector::Zero(2); }
};

}  // namespace

TEST_CASE("transport map round trip and log determinant") {
  const auto map = random_map(5, 3);
  CounterRng rng(8);
  for (int i = 0; i < 100; ++i) {
    const Vector z = rng.normal_vector(5);
    const Vector back = map.inverse(map.forward(z));
    CHECK((back - z).norm() <= 1e-10 * std::max(1.0, z.norm()));
  }
  const Matrix a = map.scale();
  CHECK(map.log_det_jacobian() == doctest::Approx(std::log(a.determinant())).epsilon(1e-12));
  const Matrix rows = Matrix::Random(4, 5);
  const Matrix mapped = map.forward_rows(rows);
  for (int i = 0; i < 4; ++i) {
    CHECK((mapped.row(i).transpose() - map.forward(rows.row(i).transpose())).norm() < 1e-13);
  }
}

TEST_CASE("transport map JSON is bit exact") {
  const auto map = random_map(4, 11);
  const auto text = map.to_json();
  const auto back = TransportMap::from_json(text);
  CHECK(back.scale() == map.scale());
  CHECK(back.shift() == map.shift());
  CHECK(back.to_json() == text);
  CHECK(text.find("\"scale_lower_triangular_row_major\"") != std::string::npos);
  CHECK_THROWS_AS(TransportMap::from_json("{\"dim\": 2, \"shift\": [0, 0]}"), ConfigError);
  CHECK_THROWS_AS(TransportMap::from_json("not json"), ConfigError);
  CHECK_THROWS_AS(
      TransportMap::from_json(
          "{\"dim\": 1, \"scale_lower_triangular_row_major\": [-1], \"shift\": [0]}"),
      ConfigError);
}

TEST_CASE("vi on a standard gaussian recovers the identity map") {
  const auto target = GaussianDensity::standard(3);
  VIConfig cfg;
  cfg.seed = 1;
  const auto fit = fit_affine_vi(target, cfg);
  const Matrix a = fit.map.scale();
  CHECK((a - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 0.05);
  CHECK(fit.map.shift().cwiseAbs().maxCoeff() < 0.05);
  CHECK(fit.elbo.size() == static_cast<std::size_t>(cfg.steps));
}

TEST_CASE("vi matches the moments of a correlated gaussian") {
  const Matrix cov = random_spd(3, 21);
  const Vector mu = (Vector(3) << 1.0, -2.0, 0.5).finished();
  const auto target = GaussianDensity::from_covariance(mu, cov);
  VIConfig cfg;
  cfg.seed = 2;
  const auto fit = fit_affine_vi(target, cfg);
  const Matrix a = fit.map.scale();
  const Matrix fitted_cov = a * a.transpose();
  CHECK((fitted_cov - cov).norm() / cov.norm() < 0.05);
  CHECK((fit.map.shift() - mu).norm() / mu.norm() < 0.05);

  // Pushing N(0, I) through the fitted map reproduces the implied moments.
  CounterRng rng(5);
  const int n = 100000;
  Matrix z(n, 3);
  for (int i = 0; i < n; ++i) z.row(i) = rng.normal_vector(3).transpose();
  const Matrix x = fit.map.forward_rows(z);
  const Vector mean = x.colwise().mean().transpose();
  const Vector se = (fitted_cov.diagonal() / n).cwiseSqrt();
  CHECK(((mean - fit.map.shift()).array().abs() < 3.0 * se.array()).all());
  const Matrix centered = x.rowwise() - mean.transpose();
  const Matrix sample_cov = centered.transpose() * centered / (n - 1.0);
  for (int i = 0; i < 3; ++i) {
    const double se_var = fitted_cov(i, i) * std::sqrt(2.0 / n);
    CHECK(std::abs(sample_cov(i, i) - fitted_cov(i, i)) < 3.0 * se_var);
  }
}

TEST_CASE("smoothed ELBO increases on a logistic posterior") {
  SynthParams p;
  p.rows = 200;
  p.covariates = 5;
  const auto data = synth_dataset(SynthKind::logistic, p, 3);
  LogisticRegressionDensity target(data.tabular.design_matrix(), data.tabular.labels);
  VIConfig cfg;
  cfg.seed = 4;
  cfg.steps = 2000;
  const auto fit = fit_affine_vi(target, cfg);
  const auto s = smoothed(fit.elbo, 100);
  CHECK(s.back() > s[99]);
  // Non-overlapping 100-step block means never drop by more than 3 standard errors.
  std::vector<double> means, ses;
  for (std::size_t start = 0; start + 100 <= fit.elbo.size(); start += 100) {
    Vector block = Eigen::Map<const Vector>(fit.elbo.data() + start, 100);
    means.push_back(block.mean());
    ses.push_back(std::sqrt(oracle::sample_variance(block) / 100.0));
  }
  for (std::size_t k = 1; k < means.size(); ++k) {
    CHECK(means[k] >= means[k - 1] - 3.0 * std::hypot(ses[k], ses[k - 1]));
  }
}

TEST_CASE("vi reports the step of a non-finite ELBO") {
  Poisoned t;
  VIConfig cfg;
  cfg.steps = 10;
  try {
    fit_affine_vi(t, cfg);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
  cfg.batch_size = 0;
  CHECK_THROWS_AS(fit_affine_vi(t, cfg), ConfigError);
}

TEST_CASE("diagonal vi keeps a diagonal scale") {
  const auto target = GaussianDensity::diagonal(Vector::Zero(3), Vector::LinSpaced(3, 0.5, 2.0));
  VIConfig cfg;
  cfg.diagonal = true;
  cfg.steps = 1500;
  const auto fit = fit_affine_vi(target, cfg);
  const Matrix a = fit.map.scale();
  CHECK((a - Matrix(a.diagonal().asDiagonal())).norm() == 0.0);
  CHECK((a.diagonal() - Vector::LinSpaced(3, 0.5, 2.0)).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("preconditioned target identities") {
  auto base = std::make_shared<GaussianDensity>(
      GaussianDensity::from_covariance(Vector::LinSpaced(3, -1, 1), random_spd(3, 31)));
  const auto id = precondition(base, TransportMap::identity(3));
  CounterRng rng(6);
  for (int i = 0; i < 20; ++i) {
    const Vector x = rng.normal_vector(3);
    CHECK(id.potential(x) == base->potential(x));
  }

  const TransportMap exact(base->scale_lower(), base->mean());
  const auto latent = precondition(base, exact);
  const auto standard = GaussianDensity::standard(3);
  const double offset = latent.potential(Vector::Zero(3)) - standard.potential(Vector::Zero(3));
  for (int i = 0; i < 100; ++i) {
    const Vector z = rng.normal_vector(3);
    CHECK(latent.potential(z) - standard.potential(z) == doctest::Approx(offset).epsilon(1e-10));
    CHECK(oracle::gradient_relative_error(latent, z) < 1e-5);
  }

  const auto q = pushforward_gaussian(exact);
  CHECK((q.covariance() - base->covariance()).norm() < 1e-12);
  CHECK_THROWS_AS(precondition(base, TransportMap::identity(2)), ContractError);
}
