#pragma once

#include "swindle/targets.hpp"

namespace swindle {

struct PhaseState {
  Vector position;
  Vector momentum;
};

struct LeapfrogConfig {
  double step_size = 0.1;
  int steps = 10;

  double trajectory_length() const { return step_size * steps; }
  void validate() const;
  // Step count that keeps step_size * steps == trajectory_length.
  static LeapfrogConfig with_trajectory_length(double trajectory_length, int steps);
};

struct LeapfrogResult {
  PhaseState state;
  double potential = 0.0;  // U at the final position
  Vector gradient;         // grad U at the final position, reusable by the next call
  int gradient_evals = 0;
  int divergent_step = -1;  // first failing step (1-based), -1 when finite

  bool divergent() const { return divergent_step >= 0; }
};

// Kick-drift-kick leapfrog for H(q, p) = 0.5 |p|^2 + U(q). Passing the
// gradient at the start position saves one evaluation: the call then costs
// exactly L gradient evaluations, otherwise L + 1. Never throws on divergence;
// check `divergent()`.
LeapfrogResult integrate(const TargetDensity& target, const PhaseState& start,
                         const LeapfrogConfig& config, const Vector* start_gradient = nullptr);

// As integrate(), but a non-finite state raises DivergenceError with the step.
LeapfrogResult leapfrog(const TargetDensity& target, const PhaseState& start,
                        const LeapfrogConfig& config, const Vector* start_gradient = nullptr);

double hamiltonian(const TargetDensity& target, const PhaseState& state);

}  // namespace swindle
