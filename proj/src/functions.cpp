#include "swindle/functions.hpp"

#include "swindle/errors.hpp"

namespace swindle {

std::string to_string(FunctionKind kind) {
  switch (kind) {
    case FunctionKind::identity: return "mean";
    case FunctionKind::centered_square: return "variance";
    case FunctionKind::predictive: return "predictive";
    case FunctionKind::custom: return "custom";
  }
  return "unknown";
}

FunctionOfState FunctionOfState::mean(Eigen::Index dimension) {
  if (dimension < 1) throw ContractError("function: dimension must be >= 1");
  return FunctionOfState("mean", FunctionKind::identity, dimension, dimension);
}

FunctionOfState FunctionOfState::centered_square(Vector center) {
  if (center.size() < 1) throw ContractError("function: dimension must be >= 1");
  const auto d = center.size();
  FunctionOfState f("variance", FunctionKind::centered_square, d, d);
  f.center_ = std::move(center);
  return f;
}

FunctionOfState FunctionOfState::predictive(Matrix rows) {
  if (rows.rows() < 1 || rows.cols() < 1) throw ContractError("function: empty predictive rows");
  FunctionOfState f("predictive", FunctionKind::predictive, rows.cols(), rows.rows());
  f.rows_ = std::move(rows);
  return f;
}

FunctionOfState FunctionOfState::custom(std::string name, Eigen::Index input_dimension,
                                        Eigen::Index output_dimension,
                                        std::function<Vector(const Vector&)> fn) {
  if (input_dimension < 1 || output_dimension < 1 || !fn) {
    throw ContractError("function: custom functions need K >= 1 and a callable");
  }
  FunctionOfState f(std::move(name), FunctionKind::custom, input_dimension, output_dimension);
  f.fn_ = std::move(fn);
  return f;
}

Vector FunctionOfState::operator()(const Vector& x) const {
  if (x.size() != input_dim_) throw ContractError("function: input dimension mismatch");
  switch (kind_) {
    case FunctionKind::identity: return x;
    case FunctionKind::centered_square: return (x - center_).cwiseAbs2();
    case FunctionKind::predictive: {
      Vector z = rows_ * x;
      for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = sigmoid(z[k]);
      return z;
    }
    case FunctionKind::custom: {
      Vector out = fn_(x);
      if (out.size() != output_dim_) throw ContractError("function: output dimension mismatch");
      return out;
    }
  }
  throw ContractError("function: unknown kind");
}

Matrix FunctionOfState::evaluate_rows(const Matrix& states, const TransportMap* map) const {
  const Matrix x = map != nullptr ? map->forward_rows(states) : states;
  if (x.cols() != input_dim_) throw ContractError("function: input dimension mismatch");
  switch (kind_) {
    case FunctionKind::identity: return x;
    case FunctionKind::centered_square:
      return (x.rowwise() - center_.transpose()).cwiseAbs2();
    case FunctionKind::predictive: {
      Matrix z = x * rows_.transpose();
      return z.unaryExpr([](double v) { return sigmoid(v); });
    }
    case FunctionKind::custom: {
      Matrix out(x.rows(), output_dim_);
      for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = (*this)(x.row(i).transpose());
      return out;
    }
  }
  throw ContractError("function: unknown kind");
}

}  // namespace swindle
