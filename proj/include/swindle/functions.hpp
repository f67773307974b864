#pragma once

#include "swindle/preconditioner.hpp"

#include <functional>
#include <string>

namespace swindle {

enum class FunctionKind { identity, centered_square, predictive, custom };

std::string to_string(FunctionKind kind);

// A vector-valued f: R^D -> R^K on parameter space. Chains that live in a
// latent space are pushed through their transport map before evaluation.
class FunctionOfState {
 public:
  // f(x) = x
  static FunctionOfState mean(Eigen::Index dimension);
  // f(x) = (x - center)^2 elementwise
  static FunctionOfState centered_square(Vector center);
  // f(x)_k = sigmoid(row_k . x), one output per row
  static FunctionOfState predictive(Matrix rows);
  static FunctionOfState custom(std::string name, Eigen::Index input_dimension,
                                Eigen::Index output_dimension,
                                std::function<Vector(const Vector&)> fn);

  const std::string& name() const { return name_; }
  FunctionKind kind() const { return kind_; }
  Eigen::Index input_dimension() const { return input_dim_; }
  Eigen::Index output_dimension() const { return output_dim_; }
  const Vector& center() const { return center_; }
  const Matrix& rows() const { return rows_; }

  Vector operator()(const Vector& x) const;
  // One output row per state row; states are mapped through `map` first when given.
  Matrix evaluate_rows(const Matrix& states, const TransportMap* map = nullptr) const;

 private:
  FunctionOfState(std::string name, FunctionKind kind, Eigen::Index in, Eigen::Index out)
      : name_(std::move(name)), kind_(kind), input_dim_(in), output_dim_(out) {}

  std::string name_;
  FunctionKind kind_;
  Eigen::Index input_dim_;
  Eigen::Index output_dim_;
  Vector center_;
  Matrix rows_;
  std::function<Vector(const Vector&)> fn_;
};

}  // namespace swindle
