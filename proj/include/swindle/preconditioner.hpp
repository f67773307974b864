#pragma once

#include "swindle/targets.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace swindle {

// Invertible affine map x = A z + b with A lower triangular, positive diagonal.
class TransportMap {
 public:
  TransportMap(Matrix scale_lower, Vector shift);
  static TransportMap identity(Eigen::Index dimension);

  Eigen::Index dimension() const { return shift_.size(); }
  const Matrix& scale() const { return scale_; }
  const Vector& shift() const { return shift_; }

  Vector forward(const Vector& latent) const;
  Vector inverse(const Vector& x) const;
  // log |det dm/dz| = sum_d log A_dd
  double log_det_jacobian() const;
  // Rows are points; applies forward() to each row.
  Matrix forward_rows(const Matrix& latent_rows) const;

  // {"dim": D, "scale_lower_triangular_row_major": [...], "shift": [...]},
  // numbers printed with 17 significant digits so parsing is bit-exact.
  std::string to_json() const;
  static TransportMap from_json(const std::string& text);

 private:
  Matrix scale_;
  Vector shift_;
};

struct VIConfig {
  int steps = 3000;
  int batch_size = 16;
  // Adam step size decays geometrically from learning_rate to
  // learning_rate * final_learning_rate_fraction over the run.
  double learning_rate = 0.05;
  double final_learning_rate_fraction = 0.02;
  // Parameters are averaged over this trailing fraction of the steps.
  double averaging_fraction = 0.25;
  bool diagonal = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct VIFit {
  TransportMap map;
  std::vector<double> elbo;  // per-step Monte Carlo ELBO estimate
};

// Maximizes the ELBO of the Gaussian family N(b, A A^T) against `target`
// with reparameterization gradients and Adam. Starts at A = I, b = 0.
// Throws NumericalError naming the step when the ELBO goes non-finite.
VIFit fit_affine_vi(const TargetDensity& target, const VIConfig& config);

// Trailing moving average with the given window, one value per step.
std::vector<double> smoothed(const std::vector<double>& values, std::size_t window);

// The target in latent coordinates: U_latent(z) = U(A z + b) - log|det A|,
// grad U_latent(z) = A^T grad U(A z + b).
class PreconditionedTarget final : public TargetDensity {
 public:
  PreconditionedTarget(TargetPtr base, TransportMap map);

  Eigen::Index dimension() const override { return map_.dimension(); }
  std::string name() const override { return "preconditioned_" + base_->name(); }
  double potential(const Vector& z) const override;
  Vector gradient(const Vector& z) const override;
  double potential_and_gradient(const Vector& z, Vector& grad) const override;

  const TargetDensity& base() const { return *base_; }
  const TransportMap& map() const { return map_; }

 private:
  TargetPtr base_;
  TransportMap map_;
  double log_det_;
};

PreconditionedTarget precondition(TargetPtr target, TransportMap map);

// The surrogate Q as a Gaussian in parameter space: N(b, A A^T).
GaussianDensity pushforward_gaussian(const TransportMap& map);

}  // namespace swindle
