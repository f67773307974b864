#include "doctest.h"

#include "swindle/errors.hpp"
#include "swindle/integrator.hpp"

#include <cmath>
#include <limits>

using namespace swindle;

namespace {

class Flat final : public TargetDensity {
 public:
  explicit Flat(Eigen::Index d) : d_(d) {}
  Eigen::Index dimension() const override { return d_; }
  std::string name() const override { return "flat"; }
  double potential(const Vector&) const override { return 0.0; }
  Vector gradient(const Vector&) const override { return Vector::Zero(d_); }

 private:
  Eigen::Index d_;
};

// U = exp(q^2): large steps overflow.
class Exploding final : public TargetDensity {
 public:
  Eigen::Index dimension() const override { return 1; }
  std::string name() const override { return "exploding"; }
  double potential(const Vector& q) const override { return std::exp(q[0] * q[0]); }
  Vector gradient(const Vector& q) const override {
    return Vector::Constant(1, 2.0 * q[0] * std::exp(q[0] * q[0]));
  }
};

}  // namespace

TEST_CASE("free particle drifts linearly") {
  Flat flat(3);
  const Vector q = Vector::LinSpaced(3, -1, 1);
  const Vector p = Vector::Constant(3, 0.7);
  const auto r = leapfrog(flat, {q, p}, {0.25, 8});
  CHECK((r.state.position - (q + 2.0 * p)).norm() < 1e-14);
  CHECK(r.state.momentum == p);
}

TEST_CASE("one harmonic step matches the hand evaluation") {
  const auto harmonic = GaussianDensity::standard(1);
  const auto r = leapfrog(harmonic, {Vector::Constant(1, 1.0), Vector::Zero(1)}, {0.1, 1});
  CHECK(r.state.position[0] == doctest::Approx(0.995).epsilon(1e-14));
  CHECK(r.state.momentum[0] == doctest::Approx(-0.09975).epsilon(1e-14));
}

TEST_CASE("gradient evaluations are counted and the boundary gradient is reused") {
  const auto g = GaussianDensity::standard(2);
  const PhaseState s{Vector::Ones(2), Vector::Ones(2)};
  const auto cold = integrate(g, s, {0.1, 7});
  CHECK(cold.gradient_evals == 8);
  const Vector start = g.gradient(s.position);
  const auto warm = integrate(g, s, {0.1, 7}, &start);
  CHECK(warm.gradient_evals == 7);
  CHECK(warm.state.position == cold.state.position);
  CHECK((warm.gradient - g.gradient(warm.state.position)).norm() == 0.0);
  CHECK(warm.potential == g.potential(warm.state.position));
}

TEST_CASE("reversibility under momentum negation") {
  const auto target = GaussianDensity::from_covariance(
      Vector::LinSpaced(4, -1, 2),
      (Matrix(4, 4) << 2, 0.3, 0, 0, 0.3, 1, 0.2, 0, 0, 0.2, 0.5, 0.1, 0, 0, 0.1, 1.5).finished());
  CounterRng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector q = rng.normal_vector(4), p = rng.normal_vector(4);
    const auto fwd = leapfrog(target, {q, p}, {0.17, 25});
    const auto back = leapfrog(target, {fwd.state.position, -fwd.state.momentum}, {0.17, 25});
    CHECK((back.state.position - q).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((back.state.momentum + p).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("one step on a linear system preserves phase-space volume") {
  const auto target = GaussianDensity::from_covariance(
      Vector::Zero(2), (Matrix(2, 2) << 1.0, 0.6, 0.6, 2.0).finished());
  const LeapfrogConfig cfg{0.3, 1};
  const Vector z0 = (Vector(4) << 0.3, -0.2, 0.5, 1.1).finished();
  auto step = [&](const Vector& z) {
    const auto r = leapfrog(target, {z.head(2), z.tail(2)}, cfg);
    Vector out(4);
    out << r.state.position, r.state.momentum;
    return out;
  };
  Matrix jac(4, 4);
  const double h = 1e-6;
  for (int j = 0; j < 4; ++j) {
    Vector a = z0, b = z0;
    a[j] += h;
    b[j] -= h;
    jac.col(j) = (step(a) - step(b)) / (2 * h);
  }
  CHECK(std::abs(jac.determinant() - 1.0) < 1e-6);
}

TEST_CASE("energy error is second order in the step size") {
  const auto harmonic = GaussianDensity::standard(1);
  const PhaseState s{Vector::Constant(1, 1.0), Vector::Constant(1, 0.5)};
  const double h0 = hamiltonian(harmonic, s);
  auto error = [&](double eps) {
    const int steps = static_cast<int>(std::lround(1.0 / eps));
    const auto r = leapfrog(harmonic, s, LeapfrogConfig::with_trajectory_length(1.0, steps));
    return std::abs(hamiltonian(harmonic, r.state) - h0);
  };
  const double e1 = error(0.2), e2 = error(0.1), e3 = error(0.05);
  CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.125));
  CHECK(e2 / e3 == doctest::Approx(4.0).epsilon(0.125));
}

TEST_CASE("hamiltonian conventions") {
  const auto g = GaussianDensity::standard(2);
  CHECK(hamiltonian(g, {Vector::Zero(2), Vector::Zero(2)}) == 0.0);
  Flat flat(2);
  CHECK(hamiltonian(flat, {Vector::Zero(2), Vector::Ones(2)}) == 1.0);
  const Vector q = (Vector(2) << 0.4, -1.3).finished();
  const Vector p = (Vector(2) << 2.0, 0.5).finished();
  CHECK(hamiltonian(g, {q, p}) - hamiltonian(g, {q, Vector::Zero(2)}) == 0.5 * p.squaredNorm());
  CHECK_THROWS_AS(hamiltonian(g, {Vector::Zero(3), Vector::Zero(3)}), ContractError);
}

TEST_CASE("divergence carries the failing step") {
  Exploding e;
  const PhaseState s{Vector::Constant(1, 1.0), Vector::Constant(1, 5.0)};
  const auto r = integrate(e, s, {0.5, 10});
  CHECK(r.divergent());
  CHECK(r.divergent_step >= 1);
  try {
    leapfrog(e, s, {0.5, 10});
    FAIL("expected divergence");
  } catch (const DivergenceError& err) {
    CHECK(err.step() == r.divergent_step);
  }
}

TEST_CASE("invalid configurations are rejected") {
  const auto g = GaussianDensity::standard(1);
  const PhaseState s{Vector::Zero(1), Vector::Zero(1)};
  CHECK_THROWS_AS(leapfrog(g, s, {0.0, 3}), ConfigError);
  CHECK_THROWS_AS(leapfrog(g, s, {0.1, 0}), ConfigError);
  CHECK_THROWS_AS(LeapfrogConfig::with_trajectory_length(1.0, 0), ConfigError);
  CHECK_THROWS_AS(leapfrog(g, {Vector::Zero(2), Vector::Zero(2)}, {0.1, 1}), ContractError);
  CHECK(LeapfrogConfig::with_trajectory_length(2.0, 8).step_size == 0.25);
}
