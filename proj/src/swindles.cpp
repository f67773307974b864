#include "swindle/swindles.hpp"

#include "swindle/errors.hpp"

#include "json.hpp"

#include <cmath>
#include <limits>

namespace swindle {
namespace {

Matrix stack_rows(const std::vector<Matrix>& parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Matrix out(rows, parts.empty() ? 0 : parts.front().cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return out;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

void attach_expectation(ControlVariateFit& fit,
                        const std::optional<SurrogateExpectation>& expectation) {
  if (!fit.expectation) {
    if (!expectation) {
      throw ConfigError("control-variate estimators need an estimate of E_Q[f(Y)]");
    }
    fit.expectation = expectation;
  }
}

void fill_efficiency(SwindleEstimate& est, const std::vector<Matrix>& reference,
                     bool rank_normalized) {
  const Vector var_ref = pooled_variance(reference);
  const Vector var_z = pooled_variance(est.z_chains);
  EssOptions options;
  options.allow_degenerate = true;
  options.rank_normalized = rank_normalized;
  est.ess_self = ess(est.z_chains, options).ess;
  const auto k = var_z.size();
  est.vr_factor.resize(k);
  est.ess.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    est.vr_factor[j] = var_z[j] > 0.0 ? var_ref[j] / var_z[j]
                                      : std::numeric_limits<double>::infinity();
    est.ess[j] = est.ess_self[j] * est.vr_factor[j];
  }
  Vector sum = Vector::Zero(k);
  Eigen::Index rows = 0;
  for (const auto& z : est.z_chains) {
    sum += z.colwise().sum().transpose();
    rows += z.rows();
  }
  est.estimates = sum / static_cast<double>(rows);
}

}  // namespace

SurrogateExpectation surrogate_expectation(const GaussianDensity& surrogate,
                                           const TransportMap& map, const FunctionOfState& f,
                                           long budget, std::uint64_t seed) {
  if (budget < 1000) throw ContractError("surrogate_expectation: budget must be >= 1000");
  const auto d = surrogate.dimension();
  if (map.dimension() != d || f.input_dimension() != d) {
    throw ContractError("surrogate_expectation: dimension mismatch");
  }
  // Q in parameter space: N(A m + b, (A L)(A L)^T).
  const Matrix a = map.scale().triangularView<Eigen::Lower>();
  const Vector mean = map.forward(surrogate.mean());
  const Matrix factor = a * surrogate.scale_lower();

  SurrogateExpectation out;
  const auto k = f.output_dimension();
  if (f.kind() == FunctionKind::identity) {
    out.mean = mean;
    out.standard_error = Vector::Zero(k);
    out.closed_form = true;
    return out;
  }
  if (f.kind() == FunctionKind::centered_square) {
    out.mean = factor.rowwise().squaredNorm() + (mean - f.center()).cwiseAbs2();
    out.standard_error = Vector::Zero(k);
    out.closed_form = true;
    return out;
  }

  CounterRng rng(seed, 0, StreamTag::general);
  Vector sum = Vector::Zero(k);
  Vector sum_sq = Vector::Zero(k);
  constexpr long kChunk = 4096;
  for (long done = 0; done < budget;) {
    const long rows = std::min(kChunk, budget - done);
    Matrix z(rows, d);
    for (long i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < d; ++j) z(i, j) = rng.normal();
    Matrix x = z * factor.transpose();
    x.rowwise() += mean.transpose();
    const Matrix fx = f.evaluate_rows(x);
    sum += fx.colwise().sum().transpose();
    sum_sq += fx.cwiseAbs2().colwise().sum().transpose();
    done += rows;
  }
  const double n = static_cast<double>(budget);
  out.mean = sum / n;
  const Vector var = ((sum_sq - n * out.mean.cwiseAbs2()) / (n - 1.0)).cwiseMax(0.0);
  out.standard_error = (var / n).cwiseSqrt();
  out.draws = budget;
  return out;
}

ControlVariateFit estimate_beta(const Matrix& fx, const Matrix& fy, const BetaOptions& options) {
  if (fx.rows() != fy.rows() || fx.cols() != fy.cols()) {
    throw ContractError("estimate_beta: fx and fy must have the same shape");
  }
  const auto n = fx.rows();
  const auto k = fx.cols();
  if (n < k + 2) {
    throw InsufficientDataError("estimate_beta: need at least K + 2 rows, got " +
                                std::to_string(n));
  }
  if (!fx.allFinite() || !fy.allFinite()) throw ContractError("estimate_beta: non-finite input");

  const Matrix x = fx.rowwise() - fx.colwise().mean();
  const Matrix f = fy.rowwise() - fy.colwise().mean();
  const double dn = static_cast<double>(n);

  ControlVariateFit fit;
  fit.beta = Matrix::Zero(k, k);
  fit.beta_stderr = Matrix::Zero(k, k);
  fit.residual_variance.resize(k);
  fit.regressand_variance = x.colwise().squaredNorm().transpose() / (dn - 1.0);

  if (options.diagonal_only) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const double ff = f.col(j).squaredNorm();
      const double ridge = options.ridge_scale * ff;
      const double denom = ff + ridge;
      const double b = denom > 0.0 ? f.col(j).dot(x.col(j)) / denom : 0.0;
      fit.beta(j, j) = b;
      const double rss = (x.col(j) - b * f.col(j)).squaredNorm();
      fit.residual_variance[j] = rss / (dn - 1.0);
      fit.beta_stderr(j, j) = denom > 0.0 ? std::sqrt(rss / (dn - 2.0) / denom) : 0.0;
    }
    return fit;
  }

  Matrix gram = f.transpose() * f;
  const double ridge = options.ridge_scale * gram.trace() / static_cast<double>(k);
  gram.diagonal().array() += ridge > 0.0 ? ridge : options.ridge_scale;
  const Eigen::LDLT<Matrix> solver(gram);
  const Matrix coef = solver.solve(f.transpose() * x);  // K x K, column j = beta_j
  const Vector inverse_diag = solver.solve(Matrix::Identity(k, k)).diagonal();
  fit.beta = coef.transpose();
  const Matrix residual = x - f * coef;
  const double dof = std::max(1.0, dn - static_cast<double>(k) - 1.0);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double rss = residual.col(j).squaredNorm();
    fit.residual_variance[j] = rss / (dn - 1.0);
    fit.beta_stderr.row(j) = (rss / dof * inverse_diag.array()).sqrt().transpose();
  }
  return fit;
}

Matrix control_variate_chain(const Matrix& fx, const Matrix& fy, const ControlVariateFit& fit) {
  if (fx.rows() != fy.rows() || fx.cols() != fy.cols()) {
    throw ContractError("control_variate_chain: fx and fy must have the same shape");
  }
  const auto k = fx.cols();
  if (fit.beta.rows() != k || fit.beta.cols() != k) {
    throw ContractError("control_variate_chain: beta does not match the function dimension");
  }
  if (!fit.expectation || fit.expectation->mean.size() != k) {
    throw ContractError("control_variate_chain: the fit carries no matching E_Q estimate");
  }
  const Matrix centered = fy.rowwise() - fit.expectation->mean.transpose();
  return fx - centered * fit.beta.transpose();
}

AntitheticAverage antithetic_average(const Matrix& fxp, const Matrix& fxm) {
  if (fxp.rows() != fxm.rows() || fxp.cols() != fxm.cols()) {
    throw ContractError("antithetic_average: shape mismatch");
  }
  AntitheticAverage out;
  out.average = 0.5 * (fxp + fxm);
  const Matrix a = fxp.rowwise() - fxp.colwise().mean();
  const Matrix b = fxm.rowwise() - fxm.colwise().mean();
  out.covariance = (a.cwiseProduct(b)).colwise().sum().transpose() /
                   static_cast<double>(std::max<Eigen::Index>(1, fxp.rows() - 1));
  out.correlation = column_correlation(fxp, fxm);
  return out;
}

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::plain: return "plain";
    case EstimatorKind::antithetic: return "antithetic";
    case EstimatorKind::control: return "control";
    case EstimatorKind::cva: return "cva";
  }
  return "unknown";
}

EstimatorKind estimator_kind_from_string(const std::string& name) {
  if (name == "plain") return EstimatorKind::plain;
  if (name == "antithetic") return EstimatorKind::antithetic;
  if (name == "control") return EstimatorKind::control;
  if (name == "cva") return EstimatorKind::cva;
  throw ConfigError("unknown estimator kind '" + name + "'");
}

std::string SwindleEstimate::to_json() const {
  nlohmann::json doc;
  doc["kind"] = to_string(kind);
  doc["estimates"] = to_std(estimates);
  doc["rho"] = to_std(rho);
  doc["vr_factor"] = to_std(vr_factor);
  doc["ess"] = to_std(ess);
  doc["grads_used"] = grads_used;
  return doc.dump(2);
}

SwindleEstimate cva_estimate(const CoupledTraces& traces, const FunctionOfState& f,
                             const ControlVariateFit& fit, Eigen::Index burn_in,
                             const TransportMap* map) {
  if (!traces.control || !traces.antithetic || !traces.reflected_control) {
    throw ConfigError("cva_estimate: traces must contain X+, X-, Y+ and Y-");
  }
  const Matrix fxp = f.evaluate_rows(traces.primary.post_burn_in(burn_in), map);
  const Matrix fxm = f.evaluate_rows(traces.antithetic->post_burn_in(burn_in), map);
  const Matrix fyp = f.evaluate_rows(traces.control->post_burn_in(burn_in), map);
  const Matrix fym = f.evaluate_rows(traces.reflected_control->post_burn_in(burn_in), map);
  const Matrix zp = control_variate_chain(fxp, fyp, fit);
  const Matrix zm = control_variate_chain(fxm, fym, fit);

  SwindleEstimate est;
  est.kind = EstimatorKind::cva;
  est.z_chains.push_back(0.5 * (zp + zm));
  est.rho = column_correlation(zp, zm);
  est.grads_used = traces.target_gradient_evals;
  est.surrogate_grads = traces.surrogate_gradient_evals;
  fill_efficiency(est, {fxp}, false);
  return est;
}

FunctionalValues functional_values(const CoupledTraces& traces, const FunctionOfState& f,
                                   Eigen::Index burn_in, const TransportMap* map) {
  FunctionalValues v;
  v.plus = f.evaluate_rows(traces.primary.post_burn_in(burn_in), map);
  v.plus_gradient_evals = traces.primary.gradient_evals;
  if (traces.antithetic) {
    v.minus = f.evaluate_rows(traces.antithetic->post_burn_in(burn_in), map);
    v.minus_gradient_evals = traces.antithetic->gradient_evals;
  }
  if (traces.control) {
    v.control = f.evaluate_rows(traces.control->post_burn_in(burn_in), map);
    v.control_gradient_evals = traces.control->gradient_evals;
  }
  if (traces.reflected_control) {
    v.reflected = f.evaluate_rows(traces.reflected_control->post_burn_in(burn_in), map);
  }
  return v;
}

SwindleEstimate swindle_estimate(EstimatorKind kind, const std::vector<CoupledTraces>& groups,
                                 const FunctionOfState& f,
                                 const std::optional<SurrogateExpectation>& expectation,
                                 const SwindleOptions& options) {
  if (groups.empty()) throw ContractError("swindle_estimate: no chain groups");
  std::vector<FunctionalValues> values;
  values.reserve(groups.size());
  for (const auto& g : groups) values.push_back(functional_values(g, f, options.burn_in, options.map));
  return swindle_estimate(kind, values, expectation, options);
}

SwindleEstimate swindle_estimate(EstimatorKind kind, const std::vector<FunctionalValues>& groups,
                                 const std::optional<SurrogateExpectation>& expectation,
                                 const SwindleOptions& options) {
  if (groups.empty()) throw ContractError("swindle_estimate: no chain groups");
  std::vector<Matrix> fxp, fxm, fyp, fym;
  SwindleEstimate est;
  est.kind = kind;
  const bool wants_minus = kind == EstimatorKind::antithetic || kind == EstimatorKind::cva;
  const bool wants_control = kind == EstimatorKind::control || kind == EstimatorKind::cva;
  for (const auto& g : groups) {
    fxp.push_back(g.plus);
    est.grads_used += g.plus_gradient_evals;
    if (wants_minus) {
      if (!g.minus) throw ConfigError("swindle_estimate: antithetic chain missing");
      fxm.push_back(*g.minus);
      est.grads_used += g.minus_gradient_evals;
    }
    if (wants_control) {
      if (!g.control) throw ConfigError("swindle_estimate: control chain missing");
      fyp.push_back(*g.control);
      est.surrogate_grads += g.control_gradient_evals;
    }
    if (kind == EstimatorKind::cva) {
      if (!g.reflected) throw ConfigError("swindle_estimate: reflected chain missing");
      fym.push_back(*g.reflected);
    }
  }
  const auto k = fxp.front().cols();

  switch (kind) {
    case EstimatorKind::plain:
      est.z_chains = fxp;
      est.rho = Vector::Zero(k);
      break;
    case EstimatorKind::antithetic: {
      for (std::size_t i = 0; i < fxp.size(); ++i) {
        est.z_chains.push_back(antithetic_average(fxp[i], fxm[i]).average);
      }
      est.rho = column_correlation(stack_rows(fxp), stack_rows(fxm));
      break;
    }
    case EstimatorKind::control: {
      ControlVariateFit fit = options.held_out_fit
                                  ? *options.held_out_fit
                                  : estimate_beta(stack_rows(fxp), stack_rows(fyp), options.beta);
      attach_expectation(fit, expectation);
      for (std::size_t i = 0; i < fxp.size(); ++i) {
        est.z_chains.push_back(control_variate_chain(fxp[i], fyp[i], fit));
      }
      est.rho = column_correlation(stack_rows(fxp), stack_rows(fyp));
      break;
    }
    case EstimatorKind::cva: {
      ControlVariateFit fit;
      if (options.held_out_fit) {
        fit = *options.held_out_fit;
      } else {
        std::vector<Matrix> xs = fxp, ys = fyp;
        xs.insert(xs.end(), fxm.begin(), fxm.end());
        ys.insert(ys.end(), fym.begin(), fym.end());
        fit = estimate_beta(stack_rows(xs), stack_rows(ys), options.beta);
      }
      attach_expectation(fit, expectation);
      std::vector<Matrix> zp, zm;
      for (std::size_t i = 0; i < fxp.size(); ++i) {
        zp.push_back(control_variate_chain(fxp[i], fyp[i], fit));
        zm.push_back(control_variate_chain(fxm[i], fym[i], fit));
        est.z_chains.push_back(0.5 * (zp.back() + zm.back()));
      }
      est.rho = column_correlation(stack_rows(zp), stack_rows(zm));
      break;
    }
  }
  fill_efficiency(est, fxp, options.rank_normalized_ess);
  return est;
}

}  // namespace swindle
