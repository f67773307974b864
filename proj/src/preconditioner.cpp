#include "swindle/preconditioner.hpp"

#include "swindle/errors.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

namespace swindle {
namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TransportMap::TransportMap(Matrix scale_lower, Vector shift)
    : scale_(std::move(scale_lower)), shift_(std::move(shift)) {
  const auto d = shift_.size();
  if (d < 1) throw ContractError("transport map: dimension must be >= 1");
  if (scale_.rows() != d || scale_.cols() != d) {
    throw ContractError("transport map: scale must be D x D");
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!(scale_(i, i) > 0.0) || !std::isfinite(scale_(i, i))) {
      throw ContractError("transport map: scale diagonal must be positive and finite");
    }
  }
  scale_.triangularView<Eigen::StrictlyUpper>().setZero();
}

TransportMap TransportMap::identity(Eigen::Index dimension) {
  return TransportMap(Matrix::Identity(dimension, dimension), Vector::Zero(dimension));
}

Vector TransportMap::forward(const Vector& latent) const {
  if (latent.size() != dimension()) throw ContractError("transport map: dimension mismatch");
  return scale_.triangularView<Eigen::Lower>() * latent + shift_;
}

Vector TransportMap::inverse(const Vector& x) const {
  if (x.size() != dimension()) throw ContractError("transport map: dimension mismatch");
  return scale_.triangularView<Eigen::Lower>().solve(x - shift_);
}

double TransportMap::log_det_jacobian() const {
  return scale_.diagonal().array().log().sum();
}

Matrix TransportMap::forward_rows(const Matrix& latent_rows) const {
  if (latent_rows.cols() != dimension()) {
    throw ContractError("transport map: dimension mismatch");
  }
  Matrix out = latent_rows * scale_.triangularView<Eigen::Lower>().transpose();
  out.rowwise() += shift_.transpose();
  return out;
}

std::string TransportMap::to_json() const {
  const auto d = dimension();
  std::ostringstream os;
  os << "{\n  \"dim\": " << d << ",\n  \"scale_lower_triangular_row_major\": [";
  bool first = true;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      os << (first ? "" : ", ") << format_double(scale_(i, j));
      first = false;
    }
  }
  os << "],\n  \"shift\": [";
  for (Eigen::Index i = 0; i < d; ++i) os << (i ? ", " : "") << format_double(shift_[i]);
  os << "]\n}\n";
  return os.str();
}

TransportMap TransportMap::from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("transport map: invalid JSON: ") + e.what());
  }
  try {
    const auto d = doc.at("dim").get<Eigen::Index>();
    const auto tri = doc.at("scale_lower_triangular_row_major").get<std::vector<double>>();
    const auto shift = doc.at("shift").get<std::vector<double>>();
    if (d < 1 || static_cast<Eigen::Index>(tri.size()) != d * (d + 1) / 2 ||
        static_cast<Eigen::Index>(shift.size()) != d) {
      throw ConfigError("transport map: array lengths do not match dim");
    }
    Matrix scale = Matrix::Zero(d, d);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) scale(i, j) = tri[k++];
    }
    return TransportMap(std::move(scale), Eigen::Map<const Vector>(shift.data(), d));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("transport map: ") + e.what());
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

void VIConfig::validate() const {
  if (steps < 1) throw ConfigError("vi: steps must be positive");
  if (batch_size < 1) throw ConfigError("vi: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("vi: learning_rate must be positive");
  if (!(final_learning_rate_fraction > 0.0) || final_learning_rate_fraction > 1.0) {
    throw ConfigError("vi: final_learning_rate_fraction must be in (0, 1]");
  }
  if (!(averaging_fraction > 0.0) || averaging_fraction > 1.0) {
    throw ConfigError("vi: averaging_fraction must be in (0, 1]");
  }
}

VIFit fit_affine_vi(const TargetDensity& target, const VIConfig& config) {
  config.validate();
  const Eigen::Index d = target.dimension();
  const Eigen::Index n_off = config.diagonal ? 0 : d * (d - 1) / 2;
  const Eigen::Index n_params = 2 * d + n_off;
  const double entropy_constant = 0.5 * d * (1.0 + std::log(2.0 * std::numbers::pi));

  // theta = [b (d), log diag (d), strictly-lower entries row-major (n_off)]
  Vector theta = Vector::Zero(n_params);
  Vector adam_m = Vector::Zero(n_params);
  Vector adam_v = Vector::Zero(n_params);
  Vector theta_sum = Vector::Zero(n_params);
  int averaged = 0;
  const int average_from =
      config.steps - std::max(1, static_cast<int>(config.averaging_fraction * config.steps));

  auto unpack_scale = [&](const Vector& th) {
    Matrix a = Matrix::Zero(d, d);
    a.diagonal() = th.segment(d, d).array().exp().matrix();
    Eigen::Index k = 2 * d;
    if (!config.diagonal) {
      for (Eigen::Index i = 1; i < d; ++i)
        for (Eigen::Index j = 0; j < i; ++j) a(i, j) = th[k++];
    }
    return a;
  };

  CounterRng rng(config.seed, 0, StreamTag::general);
  std::vector<double> elbo;
  elbo.reserve(static_cast<std::size_t>(config.steps));
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  const double decay = std::log(config.final_learning_rate_fraction);

  Vector grad_u(d);
  for (int step = 0; step < config.steps; ++step) {
    const Matrix a = unpack_scale(theta);
    const Vector b = theta.head(d);

    double mean_u = 0.0;
    Vector g_b = Vector::Zero(d);
    Matrix g_a = Matrix::Zero(d, d);
    for (int m = 0; m < config.batch_size; ++m) {
      const Vector eps = rng.normal_vector(d);
      const Vector x = a.triangularView<Eigen::Lower>() * eps + b;
      const double u = target.potential_and_gradient(x, grad_u);
      mean_u += u;
      g_b -= grad_u;
      g_a.noalias() -= grad_u * eps.transpose();
    }
    const double inv_batch = 1.0 / config.batch_size;
    mean_u *= inv_batch;
    g_b *= inv_batch;
    g_a *= inv_batch;

    const double value = -mean_u + theta.segment(d, d).sum() + entropy_constant;
    if (!std::isfinite(value) || !g_b.allFinite() || !g_a.allFinite()) {
      throw NumericalError("vi: non-finite ELBO at step " + std::to_string(step));
    }
    elbo.push_back(value);

    Vector grad(n_params);
    grad.head(d) = g_b;
    grad.segment(d, d) = (g_a.diagonal().array() * a.diagonal().array() + 1.0).matrix();
    Eigen::Index k = 2 * d;
    if (!config.diagonal) {
      for (Eigen::Index i = 1; i < d; ++i)
        for (Eigen::Index j = 0; j < i; ++j) grad[k++] = g_a(i, j);
    }

    const double lr =
        config.learning_rate * std::exp(decay * step / std::max(1, config.steps - 1));
    adam_m = kBeta1 * adam_m + (1.0 - kBeta1) * grad;
    adam_v = kBeta2 * adam_v + (1.0 - kBeta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(kBeta1, step + 1);
    const double c2 = 1.0 - std::pow(kBeta2, step + 1);
    theta.array() +=
        lr * (adam_m.array() / c1) / ((adam_v.array() / c2).sqrt() + kEps);

    if (step >= average_from) {
      theta_sum += theta;
      ++averaged;
    }
  }

  const Vector final_theta = theta_sum / averaged;
  return {TransportMap(unpack_scale(final_theta), final_theta.head(d)), std::move(elbo)};
}

std::vector<double> smoothed(const std::vector<double>& values, std::size_t window) {
  if (window == 0) throw ContractError("smoothed: window must be positive");
  std::vector<double> out(values.size());
  double running = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    running += values[i];
    if (i >= window) running -= values[i - window];
    out[i] = running / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

PreconditionedTarget::PreconditionedTarget(TargetPtr base, TransportMap map)
    : base_(std::move(base)), map_(std::move(map)) {
  if (!base_) throw ContractError("preconditioned target: null base");
  if (base_->dimension() != map_.dimension()) {
    throw ContractError("preconditioned target: map dimension does not match target");
  }
  log_det_ = map_.log_det_jacobian();
}

double PreconditionedTarget::potential(const Vector& z) const {
  return base_->potential(map_.forward(z)) - log_det_;
}

Vector PreconditionedTarget::gradient(const Vector& z) const {
  return map_.scale().triangularView<Eigen::Lower>().transpose() *
         base_->gradient(map_.forward(z));
}

double PreconditionedTarget::potential_and_gradient(const Vector& z, Vector& grad) const {
  Vector base_grad;
  const double u = base_->potential_and_gradient(map_.forward(z), base_grad);
  grad = map_.scale().triangularView<Eigen::Lower>().transpose() * base_grad;
  return u - log_det_;
}

PreconditionedTarget precondition(TargetPtr target, TransportMap map) {
  return PreconditionedTarget(std::move(target), std::move(map));
}

GaussianDensity pushforward_gaussian(const TransportMap& map) {
  return GaussianDensity(map.shift(), map.scale());
}

}  // namespace swindle
