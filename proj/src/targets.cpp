#include "swindle/targets.hpp"

#include "swindle/errors.hpp"

#include <cmath>

namespace swindle {
namespace {

void check_dimension(const TargetDensity& t, const Vector& x) {
  if (x.size() != t.dimension()) {
    throw ContractError(t.name() + ": expected a vector of dimension " +
                        std::to_string(t.dimension()) + ", got " +
                        std::to_string(x.size()));
  }
}

void check_labels(const Vector& labels, Eigen::Index rows) {
  if (labels.size() != rows) throw ContractError("labels must have one entry per design row");
  for (Eigen::Index n = 0; n < labels.size(); ++n) {
    if (labels[n] != 0.0 && labels[n] != 1.0) throw ContractError("labels must be 0 or 1");
  }
}

// sum_n softplus(z_n) - y_n z_n
double bernoulli_logit_nll(const Vector& z, const Vector& y) {
  double total = 0.0;
  for (Eigen::Index n = 0; n < z.size(); ++n) total += softplus(z[n]) - y[n] * z[n];
  return total;
}

// d/dz of the term above: sigmoid(z) - y
Vector bernoulli_logit_residual(const Vector& z, const Vector& y) {
  Vector r(z.size());
  for (Eigen::Index n = 0; n < z.size(); ++n) r[n] = sigmoid(z[n]) - y[n];
  return r;
}

}  // namespace

double TargetDensity::potential_and_gradient(const Vector& x, Vector& grad) const {
  grad = gradient(x);
  return potential(x);
}

double potential(const TargetDensity& t, const Vector& x) {
  check_dimension(t, x);
  return t.potential(x);
}

Vector grad_potential(const TargetDensity& t, const Vector& x) {
  check_dimension(t, x);
  return t.gradient(x);
}

Eigen::Index dimension(const TargetDensity& t) { return t.dimension(); }

double softplus(double z) noexcept {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------- Gaussian

GaussianDensity::GaussianDensity(Vector mean, Matrix scale_lower)
    : mean_(std::move(mean)), scale_(std::move(scale_lower)) {
  const auto d = mean_.size();
  if (d < 1) throw ContractError("gaussian: dimension must be >= 1");
  if (scale_.rows() != d || scale_.cols() != d) {
    throw ContractError("gaussian: scale factor must be D x D");
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!(scale_(i, i) > 0.0)) throw ContractError("gaussian: scale diagonal must be > 0");
  }
  scale_.triangularView<Eigen::StrictlyUpper>().setZero();
  diagonal_scale_ = scale_.isDiagonal(0.0);
}

GaussianDensity GaussianDensity::standard(Eigen::Index dimension) {
  return GaussianDensity(Vector::Zero(dimension), Matrix::Identity(dimension, dimension));
}

GaussianDensity GaussianDensity::from_covariance(Vector mean, const Matrix& covariance) {
  Eigen::LLT<Matrix> llt(covariance);
  if (llt.info() != Eigen::Success) {
    throw ContractError("gaussian: covariance is not positive definite");
  }
  return GaussianDensity(std::move(mean), llt.matrixL());
}

GaussianDensity GaussianDensity::diagonal(Vector mean, const Vector& stddev) {
  if (stddev.size() != mean.size()) throw ContractError("gaussian: stddev size mismatch");
  return GaussianDensity(std::move(mean), stddev.asDiagonal().toDenseMatrix());
}

Vector GaussianDensity::whiten(const Vector& x) const {
  if (diagonal_scale_) return (x - mean_).cwiseQuotient(scale_.diagonal());
  return scale_.triangularView<Eigen::Lower>().solve(x - mean_);
}

double GaussianDensity::potential(const Vector& x) const {
  return 0.5 * whiten(x).squaredNorm();
}

Vector GaussianDensity::gradient(const Vector& x) const {
  const Vector z = whiten(x);
  if (diagonal_scale_) return z.cwiseQuotient(scale_.diagonal());
  return scale_.triangularView<Eigen::Lower>().transpose().solve(z);
}

double GaussianDensity::potential_and_gradient(const Vector& x, Vector& grad) const {
  const Vector z = whiten(x);
  if (diagonal_scale_) {
    grad = z.cwiseQuotient(scale_.diagonal());
  } else {
    grad = scale_.triangularView<Eigen::Lower>().transpose().solve(z);
  }
  return 0.5 * z.squaredNorm();
}

// ---------------------------------------------------------------- logistic

LogisticRegressionDensity::LogisticRegressionDensity(Matrix design, Vector labels)
    : design_(std::move(design)), labels_(std::move(labels)) {
  if (design_.cols() < 1) throw ContractError("logistic regression: empty design");
  check_labels(labels_, design_.rows());
}

double LogisticRegressionDensity::potential(const Vector& w) const {
  const Vector z = design_ * w;
  return 0.5 * w.squaredNorm() + bernoulli_logit_nll(z, labels_);
}

Vector LogisticRegressionDensity::gradient(const Vector& w) const {
  const Vector z = design_ * w;
  return w + design_.transpose() * bernoulli_logit_residual(z, labels_);
}

double LogisticRegressionDensity::potential_and_gradient(const Vector& w,
                                                         Vector& grad) const {
  const Vector z = design_ * w;
  grad = w + design_.transpose() * bernoulli_logit_residual(z, labels_);
  return 0.5 * w.squaredNorm() + bernoulli_logit_nll(z, labels_);
}

// ---------------------------------------------------------------- sparse

SparseLogisticRegressionDensity::SparseLogisticRegressionDensity(Matrix design,
                                                                 Vector labels,
                                                                 double gamma_shape,
                                                                 double gamma_rate)
    : design_(std::move(design)),
      labels_(std::move(labels)),
      shape_(gamma_shape),
      rate_(gamma_rate) {
  if (design_.cols() < 1) throw ContractError("sparse logistic regression: empty design");
  if (!(shape_ > 0.0) || !(rate_ > 0.0)) {
    throw ContractError("sparse logistic regression: gamma parameters must be > 0");
  }
  check_labels(labels_, design_.rows());
}

double SparseLogisticRegressionDensity::global_scale(const Vector& x) const {
  return std::exp(x[0]);
}

Vector SparseLogisticRegressionDensity::local_scales(const Vector& x) const {
  return x.segment(1, design_.cols()).array().exp().matrix();
}

Vector SparseLogisticRegressionDensity::effective_weights(const Vector& x) const {
  const auto d = design_.cols();
  return global_scale(x) *
         x.segment(1 + d, d).cwiseProduct(local_scales(x));
}

double SparseLogisticRegressionDensity::potential(const Vector& x) const {
  const auto d = design_.cols();
  const auto logs = x.head(1 + d).array();
  const double prior_scales = (rate_ * logs.exp() - shape_ * logs).sum();
  const double prior_w = 0.5 * x.tail(d).squaredNorm();
  const Vector z = design_ * effective_weights(x);
  return prior_scales + prior_w + bernoulli_logit_nll(z, labels_);
}

double SparseLogisticRegressionDensity::potential_and_gradient(const Vector& x,
                                                               Vector& grad) const {
  const auto d = design_.cols();
  const double tau = global_scale(x);
  const Vector lambda = local_scales(x);
  const auto w = x.tail(d);
  const Vector beta = tau * w.cwiseProduct(lambda);
  const Vector z = design_ * beta;
  const Vector r = design_.transpose() * bernoulli_logit_residual(z, labels_);
  const Vector r_beta = r.cwiseProduct(beta);

  grad.resize(dimension());
  grad[0] = rate_ * tau - shape_ + r_beta.sum();
  grad.segment(1, d) = (rate_ * lambda.array() - shape_).matrix() + r_beta;
  grad.tail(d) = w + tau * r.cwiseProduct(lambda);

  const auto logs = x.head(1 + d).array();
  const double prior_scales = (rate_ * logs.exp() - shape_ * logs).sum();
  return prior_scales + 0.5 * w.squaredNorm() + bernoulli_logit_nll(z, labels_);
}

Vector SparseLogisticRegressionDensity::gradient(const Vector& x) const {
  Vector grad;
  potential_and_gradient(x, grad);
  return grad;
}

// ---------------------------------------------------------------- IRT

ItemResponseDensity::ItemResponseDensity(std::vector<Response> responses, int students,
                                         int questions)
    : responses_(std::move(responses)), students_(students), questions_(questions) {
  if (students_ < 1 || questions_ < 1) throw ContractError("irt: need >= 1 student and question");
  for (const auto& r : responses_) {
    if (r.student < 0 || r.student >= students_ || r.question < 0 ||
        r.question >= questions_ || (r.correct != 0 && r.correct != 1)) {
      throw ContractError("irt: response out of range");
    }
  }
}

double ItemResponseDensity::potential(const Vector& x) const {
  const double delta = x[students_ + questions_];
  double u = 0.5 * x.head(students_ + questions_).squaredNorm() +
             0.5 * (delta - kDeltaPriorMean) * (delta - kDeltaPriorMean);
  for (const auto& r : responses_) {
    const double z = x[r.student] - x[students_ + r.question] + delta;
    u += softplus(z) - r.correct * z;
  }
  return u;
}

double ItemResponseDensity::potential_and_gradient(const Vector& x, Vector& grad) const {
  const Eigen::Index delta_index = students_ + questions_;
  const double delta = x[delta_index];
  grad = x;
  grad[delta_index] = delta - kDeltaPriorMean;
  double u = 0.5 * x.head(delta_index).squaredNorm() +
             0.5 * (delta - kDeltaPriorMean) * (delta - kDeltaPriorMean);
  for (const auto& r : responses_) {
    const double z = x[r.student] - x[students_ + r.question] + delta;
    u += softplus(z) - r.correct * z;
    const double residual = sigmoid(z) - r.correct;
    grad[r.student] += residual;
    grad[students_ + r.question] -= residual;
    grad[delta_index] += residual;
  }
  return u;
}

Vector ItemResponseDensity::gradient(const Vector& x) const {
  Vector grad;
  potential_and_gradient(x, grad);
  return grad;
}

}  // namespace swindle
