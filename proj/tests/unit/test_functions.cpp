#include "doctest.h"

#include "swindle/errors.hpp"
#include "swindle/functions.hpp"

#include <cmath>

using namespace swindle;

TEST_CASE("built-in functionals") {
  const Vector x = (Vector(3) << 1.0, -2.0, 0.5).finished();
  CHECK(FunctionOfState::mean(3)(x) == x);
  const auto sq = FunctionOfState::centered_square(Vector::Constant(3, 0.5));
  CHECK(sq(x) == (Vector(3) << 0.25, 6.25, 0.0).finished());
  Matrix rows(2, 3);
  rows << 1, 0, 0, 0, 1, 1;
  const auto pred = FunctionOfState::predictive(rows);
  CHECK(pred.output_dimension() == 2);
  CHECK(pred(x)[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
  CHECK(pred(x)[1] == doctest::Approx(1.0 / (1.0 + std::exp(1.5))));
  CHECK(to_string(sq.kind()) == "variance");
}

TEST_CASE("row evaluation agrees with pointwise evaluation and applies the map") {
  Matrix rows(2, 2);
  rows << 0.3, -0.1, 1.0, 2.0;
  const auto pred = FunctionOfState::predictive(rows);
  const auto custom = FunctionOfState::custom("sum", 2, 1, [](const Vector& v) {
    return Vector::Constant(1, v.sum());
  });
  const TransportMap map((Matrix(2, 2) << 2.0, 0.0, 0.5, 1.0).finished(), Vector::Ones(2));
  const Matrix states = (Matrix(3, 2) << 0, 0, 1, -1, 0.5, 2).finished();
  for (const auto* f : {&pred, &custom}) {
    const Matrix out = f->evaluate_rows(states, &map);
    for (int i = 0; i < 3; ++i) {
      const Vector expected = (*f)(map.forward(states.row(i).transpose()));
      CHECK((out.row(i).transpose() - expected).norm() < 1e-14);
    }
  }
  CHECK_THROWS_AS(custom(Vector::Zero(3)), ContractError);
  const auto wrong = FunctionOfState::custom("bad", 2, 2, [](const Vector&) { return Vector::Zero(1); });
  CHECK_THROWS_AS(wrong(Vector::Zero(2)), ContractError);
}
