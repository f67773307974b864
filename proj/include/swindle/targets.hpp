#pragma once

#include "swindle/rng.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace swindle {

// Un-normalized density P(x) ∝ exp(-U(x)) on R^D with an analytic gradient.
// Implementations are immutable; every method is safe to call concurrently.
//
// Additive constants: each type drops every normalizing constant that does
// not depend on x, so U is the sum of the x-dependent terms only. For the
// Gaussian this makes U(mean) = 0 exactly.
class TargetDensity {
 public:
  virtual ~TargetDensity() = default;

  virtual Eigen::Index dimension() const = 0;
  virtual std::string name() const = 0;

  virtual double potential(const Vector& x) const = 0;
  virtual Vector gradient(const Vector& x) const = 0;
  // Returns U(x) and writes grad U(x) into `grad`. The default calls both.
  virtual double potential_and_gradient(const Vector& x, Vector& grad) const;

  // Present only for densities with a tractable mean (Gaussian surrogates).
  virtual std::optional<Vector> known_mean() const { return std::nullopt; }
};

using TargetPtr = std::shared_ptr<const TargetDensity>;

// Checked entry points: throw ContractError on a dimension mismatch.
double potential(const TargetDensity& t, const Vector& x);
Vector grad_potential(const TargetDensity& t, const Vector& x);
Eigen::Index dimension(const TargetDensity& t);

// N(mean, L L^T), U(x) = 0.5 * |L^{-1}(x - mean)|^2.
class GaussianDensity final : public TargetDensity {
 public:
  GaussianDensity(Vector mean, Matrix scale_lower);

  static GaussianDensity standard(Eigen::Index dimension);
  static GaussianDensity from_covariance(Vector mean, const Matrix& covariance);
  static GaussianDensity diagonal(Vector mean, const Vector& stddev);

  Eigen::Index dimension() const override { return mean_.size(); }
  std::string name() const override { return "gaussian"; }
  double potential(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  double potential_and_gradient(const Vector& x, Vector& grad) const override;
  std::optional<Vector> known_mean() const override { return mean_; }

  const Vector& mean() const { return mean_; }
  const Matrix& scale_lower() const { return scale_; }
  Matrix covariance() const { return scale_ * scale_.transpose(); }
  // mean + L z: pushes a standard normal draw onto this Gaussian.
  Vector transform(const Vector& z) const { return mean_ + scale_ * z; }

 private:
  Vector whiten(const Vector& x) const;

  Vector mean_;
  Matrix scale_;
  bool diagonal_scale_;
};

// Numerically stable log(1 + e^z) and sigmoid.
double softplus(double z) noexcept;
double sigmoid(double z) noexcept;

// w_d ~ N(0, 1); y_n ~ Bern(sigmoid(x_n . w)). The design matrix already
// carries its bias column, so D equals its column count.
// U(w) = 0.5 |w|^2 + sum_n [softplus(x_n . w) - y_n x_n . w].
class LogisticRegressionDensity final : public TargetDensity {
 public:
  LogisticRegressionDensity(Matrix design, Vector labels);

  Eigen::Index dimension() const override { return design_.cols(); }
  std::string name() const override { return "logistic_regression"; }
  double potential(const Vector& w) const override;
  Vector gradient(const Vector& w) const override;
  double potential_and_gradient(const Vector& w, Vector& grad) const override;

  const Matrix& design() const { return design_; }
  const Vector& labels() const { return labels_; }

 private:
  Matrix design_;
  Vector labels_;
};

// tau ~ Gam(a, b), lambda_d ~ Gam(a, b) (shape/rate), w_d ~ N(0, 1),
// y_n ~ Bern(sigmoid(x_n . (tau * w o lambda))).
// Unconstrained layout: [t, l_1..l_d, w_1..w_d] with tau = e^t, lambda = e^l,
// so D = 2 d + 1. The log-Jacobian t + sum l_d is folded into U:
// U = sum_{s in {t, l}} (b e^s - a s) + 0.5 |w|^2 + likelihood terms.
class SparseLogisticRegressionDensity final : public TargetDensity {
 public:
  SparseLogisticRegressionDensity(Matrix design, Vector labels, double gamma_shape = 0.5,
                                  double gamma_rate = 0.5);

  Eigen::Index dimension() const override { return 2 * design_.cols() + 1; }
  std::string name() const override { return "sparse_logistic_regression"; }
  double potential(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  double potential_and_gradient(const Vector& x, Vector& grad) const override;

  // tau * w o lambda for an unconstrained parameter vector.
  Vector effective_weights(const Vector& x) const;
  double global_scale(const Vector& x) const;   // tau
  Vector local_scales(const Vector& x) const;   // lambda

 private:
  Matrix design_;
  Vector labels_;
  double shape_;
  double rate_;
};

struct Response {
  int student;
  int question;
  int correct;  // 0 or 1
};

// 1PL item response model. Layout [alpha_1..alpha_S, beta_1..beta_J, delta]:
// alpha ~ N(0, 1), beta ~ N(0, 1), delta ~ N(0.75, 1),
// y_ij ~ Bern(sigmoid(alpha_i - beta_j + delta)).
class ItemResponseDensity final : public TargetDensity {
 public:
  static constexpr double kDeltaPriorMean = 0.75;

  ItemResponseDensity(std::vector<Response> responses, int students, int questions);

  Eigen::Index dimension() const override { return students_ + questions_ + 1; }
  std::string name() const override { return "item_response"; }
  double potential(const Vector& x) const override;
  Vector gradient(const Vector& x) const override;
  double potential_and_gradient(const Vector& x, Vector& grad) const override;

  int students() const { return students_; }
  int questions() const { return questions_; }

 private:
  std::vector<Response> responses_;
  int students_;
  int questions_;
};

}  // namespace swindle
