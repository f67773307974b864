#include "swindle/integrator.hpp"

#include "swindle/errors.hpp"

#include <cmath>

namespace swindle {

void LeapfrogConfig::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) {
    throw ConfigError("leapfrog: step size must be positive");
  }
  if (steps < 1) throw ConfigError("leapfrog: step count must be >= 1");
}

LeapfrogConfig LeapfrogConfig::with_trajectory_length(double trajectory_length, int steps) {
  if (steps < 1) throw ConfigError("leapfrog: step count must be >= 1");
  LeapfrogConfig cfg{trajectory_length / steps, steps};
  cfg.validate();
  return cfg;
}

LeapfrogResult integrate(const TargetDensity& target, const PhaseState& start,
                         const LeapfrogConfig& config, const Vector* start_gradient) {
  config.validate();
  const auto d = target.dimension();
  if (start.position.size() != d || start.momentum.size() != d) {
    throw ContractError("leapfrog: state dimension does not match target");
  }

  LeapfrogResult out;
  Vector q = start.position;
  Vector p = start.momentum;
  Vector g;
  if (start_gradient != nullptr) {
    if (start_gradient->size() != d) throw ContractError("leapfrog: gradient dimension mismatch");
    g = *start_gradient;
  } else {
    g = target.gradient(q);
    ++out.gradient_evals;
  }

  const double eps = config.step_size;
  double u = 0.0;
  p -= 0.5 * eps * g;
  for (int l = 1; l <= config.steps; ++l) {
    q += eps * p;
    if (l < config.steps) {
      g = target.gradient(q);
      ++out.gradient_evals;
      p -= eps * g;
    } else {
      u = target.potential_and_gradient(q, g);
      ++out.gradient_evals;
      p -= 0.5 * eps * g;
    }
    if (!q.allFinite() || !p.allFinite() || (l == config.steps && !std::isfinite(u))) {
      out.divergent_step = l;
      break;
    }
  }

  out.state = {std::move(q), std::move(p)};
  out.potential = u;
  out.gradient = std::move(g);
  return out;
}

LeapfrogResult leapfrog(const TargetDensity& target, const PhaseState& start,
                        const LeapfrogConfig& config, const Vector* start_gradient) {
  LeapfrogResult r = integrate(target, start, config, start_gradient);
  if (r.divergent()) throw DivergenceError(r.divergent_step);
  return r;
}

double hamiltonian(const TargetDensity& target, const PhaseState& state) {
  if (state.position.size() != target.dimension() ||
      state.momentum.size() != target.dimension()) {
    throw ContractError("hamiltonian: state dimension does not match target");
  }
  return 0.5 * state.momentum.squaredNorm() + target.potential(state.position);
}

}  // namespace swindle
