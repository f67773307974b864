#include "doctest.h"

#include "oracles.hpp"
#include "swindle/data_io.hpp"
#include "swindle/errors.hpp"
#include "swindle/targets.hpp"

#include <cmath>
#include <memory>
#include <vector>

using namespace swindle;

namespace {

// Brute-force negative log joint of Bayesian logistic regression without
// the normalizing constants: one scalar at a time.
double logistic_oracle(const Matrix& x, const Vector& y, const Vector& w) {
  double u = 0.0;
  for (Eigen::Index d = 0; d < w.size(); ++d) u += 0.5 * w[d] * w[d];
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    double z = 0.0;
    for (Eigen::Index d = 0; d < w.size(); ++d) z += x(n, d) * w[d];
    const double p = 1.0 / (1.0 + std::exp(-z));
    u -= y[n] > 0.5 ? std::log(p) : std::log(1.0 - p);
  }
  return u;
}

std::vector<std::shared_ptr<TargetDensity>> bundled_targets() {
  std::vector<std::shared_ptr<TargetDensity>> out;
  Matrix cov(3, 3);
  cov << 2.0, 0.5, 0.1, 0.5, 1.0, -0.3, 0.1, -0.3, 0.7;
  out.push_back(std::make_shared<GaussianDensity>(
      GaussianDensity::from_covariance(Vector::LinSpaced(3, -1, 1), cov)));
  out.push_back(std::make_shared<GaussianDensity>(
      GaussianDensity::diagonal(Vector::Ones(4), Vector::LinSpaced(4, 0.5, 2.0))));
  SynthParams p;
  p.rows = 60;
  p.covariates = 4;
  const auto logistic = synth_dataset(SynthKind::logistic, p, 5);
  out.push_back(std::make_shared<LogisticRegressionDensity>(logistic.tabular.design_matrix(),
                                                            logistic.tabular.labels));
  const auto sparse = synth_dataset(SynthKind::sparse, p, 6);
  out.push_back(std::make_shared<SparseLogisticRegressionDensity>(sparse.tabular.design_matrix(),
                                                                  sparse.tabular.labels));
  p.students = 12;
  p.questions = 7;
  p.response_fraction = 0.7;
  const auto irt = synth_dataset(SynthKind::irt, p, 7);
  out.push_back(std::make_shared<ItemResponseDensity>(
      irt.responses.responses, irt.responses.students, irt.responses.questions));
  return out;
}

}  // namespace

TEST_CASE("standard gaussian potential conventions") {
  const auto g = GaussianDensity::standard(2);
  CHECK(potential(g, Vector::Zero(2)) == 0.0);
  const Vector x = (Vector(2) << 3.0, 4.0).finished();
  CHECK(potential(g, x) == 12.5);
  CHECK(grad_potential(g, x) == x);
  CHECK(g.known_mean().has_value());
}

TEST_CASE("gaussian potential differences follow the quadratic form") {
  Matrix cov(3, 3);
  cov << 1.5, 0.4, 0.2, 0.4, 0.9, 0.1, 0.2, 0.1, 2.2;
  const Vector mu = (Vector(3) << 0.5, -1.0, 2.0).finished();
  const auto g = GaussianDensity::from_covariance(mu, cov);
  const Matrix prec = cov.inverse();
  CounterRng rng(1);
  for (int i = 0; i < 50; ++i) {
    const Vector x = rng.normal_vector(3) * 2, y = rng.normal_vector(3) * 2;
    const double expected = 0.5 * ((x - mu).dot(prec * (x - mu)) - (y - mu).dot(prec * (y - mu)));
    const double got = g.potential(x) - g.potential(y);
    CHECK(std::abs(got - expected) <= 1e-10 * std::max(1.0, std::abs(expected)));
  }
  CHECK(g.potential(mu) == 0.0);
}

TEST_CASE("logistic regression matches a scalar brute-force oracle") {
  Matrix x(2, 3);
  x << 0.3, -1.2, 1.0, 2.0, 0.7, 1.0;
  const Vector y = (Vector(2) << 1.0, 0.0).finished();
  LogisticRegressionDensity t(x, y);
  const Vector w = (Vector(3) << 0.4, -0.8, 0.25).finished();
  CHECK(t.potential(w) == doctest::Approx(logistic_oracle(x, y, w)).epsilon(1e-13));
  CHECK(t.dimension() == 3);
}

TEST_CASE("stable log-sigmoid survives extreme logits") {
  CHECK(softplus(800.0) == 800.0);
  CHECK(softplus(-800.0) == 0.0);
  CHECK(sigmoid(-800.0) == 0.0);
  CHECK(sigmoid(800.0) == 1.0);
  Matrix x(1, 1);
  x << 1.0;
  LogisticRegressionDensity t(x, Vector::Ones(1));
  CHECK(std::isfinite(t.potential(Vector::Constant(1, -500.0))));
  CHECK(t.gradient(Vector::Constant(1, -500.0)).allFinite());
}

TEST_CASE("every bundled target passes the finite-difference check at 100 points") {
  int target_index = 0;
  for (const auto& t : bundled_targets()) {
    CAPTURE(t->name());
    CounterRng rng(100 + static_cast<std::uint64_t>(target_index++));
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Vector x = 0.8 * rng.normal_vector(t->dimension());
      worst = std::max(worst, oracle::gradient_relative_error(*t, x));
      Vector g;
      const double u = t->potential_and_gradient(x, g);
      CHECK(u == doctest::Approx(t->potential(x)).epsilon(1e-12));
      CHECK((g - t->gradient(x)).norm() <= 1e-12 * std::max(1.0, g.norm()));
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("sparse logistic regression gradient at the unconstrained origin") {
  SynthParams p;
  p.rows = 40;
  p.covariates = 3;
  const auto data = synth_dataset(SynthKind::sparse, p, 9);
  SparseLogisticRegressionDensity t(data.tabular.design_matrix(), data.tabular.labels);
  CHECK(oracle::gradient_relative_error(t, Vector::Zero(t.dimension())) < 1e-5);
}

TEST_CASE("sparse positivity transform keeps scales positive") {
  SynthParams p;
  p.rows = 10;
  p.covariates = 2;
  const auto data = synth_dataset(SynthKind::sparse, p, 10);
  SparseLogisticRegressionDensity t(data.tabular.design_matrix(), data.tabular.labels);
  CounterRng rng(4);
  for (int i = 0; i < 200; ++i) {
    const Vector x = 5.0 * rng.normal_vector(t.dimension());
    CHECK(t.global_scale(x) > 0.0);
    CHECK((t.local_scales(x).array() > 0.0).all());
    const Vector w = t.effective_weights(x);
    const Eigen::Index d = (t.dimension() - 1) / 2;
    for (Eigen::Index k = 0; k < d; ++k) {
      CHECK(w[k] == doctest::Approx(std::exp(x[0]) * std::exp(x[1 + k]) * x[1 + d + k]));
    }
  }
}

TEST_CASE("dimensions of the benchmark configurations") {
  SynthParams p;
  p.rows = 50;
  p.covariates = 24;
  const auto credit = synth_dataset(SynthKind::logistic, p, 1);
  LogisticRegressionDensity lr(credit.tabular.design_matrix(), credit.tabular.labels);
  CHECK(dimension(lr) == 25);
  SparseLogisticRegressionDensity sp(credit.tabular.design_matrix(), credit.tabular.labels);
  CHECK(dimension(sp) == 51);
  std::vector<Response> r{{399, 99, 1}, {0, 0, 0}};
  ItemResponseDensity irt(r, 400, 100);
  CHECK(dimension(irt) == 501);
}

TEST_CASE("item response logit structure") {
  // One observation: U = prior terms + softplus(z) - y z with z = a - b + delta.
  ItemResponseDensity t({{0, 0, 1}}, 1, 1);
  const Vector x = (Vector(3) << 0.3, -0.4, 1.1).finished();
  const double z = 0.3 + 0.4 + 1.1;
  const double expected = 0.5 * (0.09 + 0.16 + (1.1 - 0.75) * (1.1 - 0.75)) + softplus(z) - z;
  CHECK(t.potential(x) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("contract violations") {
  const auto g = GaussianDensity::standard(2);
  CHECK_THROWS_AS(potential(g, Vector::Zero(3)), ContractError);
  CHECK_THROWS_AS(grad_potential(g, Vector::Zero(1)), ContractError);
  CHECK_THROWS_AS(GaussianDensity(Vector::Zero(2), -Matrix::Identity(2, 2)), ContractError);
  Matrix x(2, 2);
  x.setOnes();
  CHECK_THROWS_AS(LogisticRegressionDensity(x, Vector::Constant(2, 0.5)), ContractError);
  CHECK_THROWS_AS(ItemResponseDensity({{2, 0, 1}}, 1, 1), ContractError);
}
