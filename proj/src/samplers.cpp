#include "swindle/samplers.hpp"

#include "swindle/errors.hpp"

#include <cmath>
#include <limits>

namespace swindle {
namespace {

double sign_value(NoiseSign sign) { return sign == NoiseSign::plus ? 1.0 : -1.0; }

void check_state(const TargetDensity& target, const ChainState& s, bool needs_gradient) {
  if (s.position.size() != target.dimension()) {
    throw ContractError("sampler: state dimension does not match target");
  }
  if (needs_gradient && s.gradient.size() != target.dimension()) {
    throw ContractError("sampler: chain state carries no gradient for a gradient kernel");
  }
}

Transition finish(const ChainState& current, ChainState proposal, double h0, double h1,
                  double b, bool divergent, int evals) {
  Transition t;
  t.gradient_evals = evals;
  t.divergent = divergent;
  t.log_accept_ratio = divergent ? -std::numeric_limits<double>::infinity() : h0 - h1;
  t.accepted = !divergent && mh_accept(h0, h1, b);
  t.next = t.accepted ? std::move(proposal) : current;
  return t;
}

}  // namespace

std::string to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::hmc: return "hmc";
    case KernelKind::mala: return "mala";
    case KernelKind::rwm: return "rwm";
  }
  return "unknown";
}

KernelKind kernel_kind_from_string(const std::string& name) {
  if (name == "hmc") return KernelKind::hmc;
  if (name == "mala") return KernelKind::mala;
  if (name == "rwm") return KernelKind::rwm;
  throw ConfigError("unknown kernel kind '" + name + "'");
}

void KernelConfig::validate() const {
  if (steps < 1) throw ConfigError("kernel: steps must be positive");
  if (burn_in < 0 || burn_in >= steps) throw ConfigError("kernel: need 0 <= burn_in < steps");
  switch (kind) {
    case KernelKind::hmc: leapfrog.validate(); break;
    case KernelKind::mala:
      if (!(step_size > 0.0)) throw ConfigError("mala: step size must be positive");
      break;
    case KernelKind::rwm:
      if (!(step_size >= 0.0)) throw ConfigError("rwm: step size must be non-negative");
      break;
  }
}

ChainState make_chain_state(const TargetDensity& target, const Vector& x, KernelKind kind) {
  if (x.size() != target.dimension()) {
    throw ContractError("sampler: start dimension does not match target");
  }
  ChainState s;
  s.position = x;
  if (kind == KernelKind::rwm) {
    s.potential = target.potential(x);
  } else {
    s.potential = target.potential_and_gradient(x, s.gradient);
  }
  return s;
}

bool mh_accept(double h0, double h1, double b) noexcept {
  if (!std::isfinite(h1)) return false;
  return b < std::min(1.0, std::exp(h0 - h1));
}

MhDecision mh_adjust(const Vector& q0, const Vector& q1, double h0, double h1, double b) {
  if (!(b >= 0.0 && b < 1.0)) throw ContractError("mh_adjust: b must lie in [0, 1)");
  const bool accept = mh_accept(h0, h1, b);
  return {accept ? q1 : q0, accept};
}

Transition hmc_step(const TargetDensity& target, const ChainState& current,
                    const StepNoise& noise, const KernelConfig& config, NoiseSign sign) {
  check_state(target, current, true);
  const Vector p0 = sign_value(sign) * noise.momentum;
  const double h0 = 0.5 * p0.squaredNorm() + current.potential;
  LeapfrogResult r =
      integrate(target, {current.position, p0}, config.leapfrog, &current.gradient);
  const double h1 = 0.5 * r.state.momentum.squaredNorm() + r.potential;
  ChainState proposal{std::move(r.state.position), r.potential, std::move(r.gradient)};
  return finish(current, std::move(proposal), h0, h1, noise.uniform, r.divergent(),
                r.gradient_evals);
}

Transition mala_step(const TargetDensity& target, const ChainState& current,
                     const StepNoise& noise, const KernelConfig& config, NoiseSign sign) {
  check_state(target, current, true);
  const double eps = config.step_size;
  const Vector xi = sign_value(sign) * noise.momentum;
  ChainState proposal;
  proposal.position = current.position - 0.5 * eps * eps * current.gradient + eps * xi;
  proposal.potential = target.potential_and_gradient(proposal.position, proposal.gradient);
  const bool divergent = !proposal.position.allFinite() || !std::isfinite(proposal.potential) ||
                         !proposal.gradient.allFinite();
  // Forward proposal density contributes |xi|^2 / 2; reverse uses grad at x'.
  const double h0 = current.potential + 0.5 * xi.squaredNorm();
  const Vector back =
      current.position - proposal.position + 0.5 * eps * eps * proposal.gradient;
  const double h1 = proposal.potential + back.squaredNorm() / (2.0 * eps * eps);
  return finish(current, std::move(proposal), h0, h1, noise.uniform, divergent, 1);
}

Transition rwm_step(const TargetDensity& target, const ChainState& current,
                    const StepNoise& noise, const KernelConfig& config, NoiseSign sign) {
  check_state(target, current, false);
  ChainState proposal;
  proposal.position = current.position + (sign_value(sign) * config.step_size) * noise.momentum;
  proposal.potential = target.potential(proposal.position);
  const double h1 = proposal.potential;
  const bool divergent = !std::isfinite(h1);
  return finish(current, std::move(proposal), current.potential, h1, noise.uniform, divergent,
                1);
}

Transition kernel_step(const TargetDensity& target, const ChainState& current,
                       const StepNoise& noise, const KernelConfig& config, NoiseSign sign) {
  switch (config.kind) {
    case KernelKind::hmc: return hmc_step(target, current, noise, config, sign);
    case KernelKind::mala: return mala_step(target, current, noise, config, sign);
    case KernelKind::rwm: return rwm_step(target, current, noise, config, sign);
  }
  throw ConfigError("unknown kernel kind");
}

double ChainTrace::acceptance_rate(Eigen::Index from) const {
  const auto n = static_cast<Eigen::Index>(accepted.size());
  if (from >= n) return 0.0;
  long count = 0;
  for (Eigen::Index i = from; i < n; ++i) count += accepted[static_cast<std::size_t>(i)];
  return static_cast<double>(count) / static_cast<double>(n - from);
}

Matrix ChainTrace::post_burn_in(Eigen::Index burn_in) const {
  if (burn_in < 0 || burn_in >= samples.rows()) {
    throw ContractError("trace: burn-in must be within the trace");
  }
  return samples.bottomRows(samples.rows() - burn_in);
}

ChainRunner::ChainRunner(const TargetDensity& target, const Vector& start,
                         const KernelConfig& config, NoiseSign sign)
    : target_(&target), config_(&config), sign_(sign) {
  config.validate();
  state_ = make_chain_state(target, start, config.kind);
  trace_.samples.resize(config.steps, target.dimension());
  trace_.accepted.assign(static_cast<std::size_t>(config.steps), 0);
  trace_.log_accept_ratio.resize(config.steps);
  trace_.gradient_evals = 1;
}

void ChainRunner::step(std::uint64_t index, const StepNoise& noise) {
  const auto row = static_cast<Eigen::Index>(index);
  if (row >= trace_.samples.rows()) throw ContractError("chain runner: step beyond trace");
  Transition t = kernel_step(*target_, state_, noise, *config_, sign_);
  state_ = std::move(t.next);
  trace_.samples.row(row) = state_.position.transpose();
  trace_.accepted[index] = t.accepted ? 1 : 0;
  trace_.log_accept_ratio[row] = t.log_accept_ratio;
  trace_.gradient_evals += t.gradient_evals;
  trace_.divergences += t.divergent ? 1 : 0;
}

ChainTrace run_chain(const TargetDensity& target, const Vector& start,
                     const KernelConfig& config, std::uint64_t seed, NoiseSign sign) {
  ChainRunner runner(target, start, config, sign);
  const NoiseStream stream(seed, target.dimension());
  for (int i = 0; i < config.steps; ++i) {
    runner.step(static_cast<std::uint64_t>(i), stream.draw(static_cast<std::uint64_t>(i)));
  }
  return runner.take_trace();
}

CoupledTraces run_coupled(const TargetDensity& target_x, const TargetDensity& target_y,
                          const Vector& x0, const Vector& y0, CouplingMode mode,
                          const KernelConfig& config, std::uint64_t seed,
                          const std::optional<Vector>& center) {
  const auto d = target_x.dimension();
  if (target_y.dimension() != d || x0.size() != d || y0.size() != d) {
    throw ContractError("run_coupled: dimensions of targets and starts must agree");
  }
  const NoiseSign partner_sign =
      mode == CouplingMode::antithetic ? NoiseSign::minus : NoiseSign::plus;
  ChainRunner x(target_x, x0, config, NoiseSign::plus);
  ChainRunner y(target_y, y0, config, partner_sign);
  const NoiseStream stream(seed, d);
  for (int i = 0; i < config.steps; ++i) {
    const StepNoise noise = stream.draw(static_cast<std::uint64_t>(i));
    x.step(static_cast<std::uint64_t>(i), noise);
    y.step(static_cast<std::uint64_t>(i), noise);
  }

  CoupledTraces out;
  out.seed = seed;
  out.center = center.value_or(Vector::Zero(d));
  if (out.center.size() != d) throw ContractError("run_coupled: center dimension mismatch");
  out.primary = x.take_trace();
  ChainTrace partner = y.take_trace();
  out.target_gradient_evals = out.primary.gradient_evals;
  const bool partner_is_target = mode == CouplingMode::antithetic || &target_x == &target_y;
  (partner_is_target ? out.target_gradient_evals : out.surrogate_gradient_evals) +=
      partner.gradient_evals;
  if (mode == CouplingMode::antithetic) {
    out.antithetic = std::move(partner);
  } else {
    out.control = std::move(partner);
  }
  return out;
}

CoupledTraces run_cva(const TargetDensity& target, const TargetDensity& surrogate,
                      const Vector& x0_plus, const Vector& x0_minus, const Vector& y0_plus,
                      const KernelConfig& config, std::uint64_t seed) {
  const auto mu = surrogate.known_mean();
  if (!mu) throw ConfigError("run_cva: the surrogate must have a known mean");
  const auto d = target.dimension();
  if (surrogate.dimension() != d || x0_plus.size() != d || x0_minus.size() != d ||
      y0_plus.size() != d) {
    throw ContractError("run_cva: dimensions of targets and starts must agree");
  }
  ChainRunner xp(target, x0_plus, config, NoiseSign::plus);
  ChainRunner xm(target, x0_minus, config, NoiseSign::minus);
  ChainRunner yp(surrogate, y0_plus, config, NoiseSign::plus);
  const NoiseStream stream(seed, d);
  for (int i = 0; i < config.steps; ++i) {
    const StepNoise noise = stream.draw(static_cast<std::uint64_t>(i));
    xp.step(static_cast<std::uint64_t>(i), noise);
    xm.step(static_cast<std::uint64_t>(i), noise);
    yp.step(static_cast<std::uint64_t>(i), noise);
  }

  CoupledTraces out;
  out.seed = seed;
  out.center = *mu;
  out.primary = xp.take_trace();
  out.antithetic = xm.take_trace();
  out.control = yp.take_trace();

  ChainTrace reflected;
  reflected.samples = (-out.control->samples).rowwise() + (2.0 * out.center).transpose();
  reflected.accepted = out.control->accepted;
  reflected.log_accept_ratio = out.control->log_accept_ratio;
  out.reflected_control = std::move(reflected);

  out.target_gradient_evals = out.primary.gradient_evals + out.antithetic->gradient_evals;
  out.surrogate_gradient_evals = out.control->gradient_evals;
  return out;
}

}  // namespace swindle
