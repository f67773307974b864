#pragma once

#include "swindle/integrator.hpp"
#include "swindle/rng.hpp"
#include "swindle/targets.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace swindle {

enum class KernelKind { hmc, mala, rwm };

std::string to_string(KernelKind kind);
KernelKind kernel_kind_from_string(const std::string& name);

struct KernelConfig {
  KernelKind kind = KernelKind::hmc;
  LeapfrogConfig leapfrog;  // hmc
  double step_size = 0.1;   // mala, rwm proposal scale
  int steps = 1000;
  int burn_in = 500;

  void validate() const;
};

// Sign applied to the shared Gaussian noise: antithetic partners use -1.
enum class NoiseSign { plus = 1, minus = -1 };

// Position plus cached potential and gradient at that position.
struct ChainState {
  Vector position;
  double potential = 0.0;
  Vector gradient;  // empty for rwm
};

// Evaluates U (and grad U unless the kernel is rwm) at x. Costs one evaluation.
ChainState make_chain_state(const TargetDensity& target, const Vector& x, KernelKind kind);

struct Transition {
  ChainState next;
  bool accepted = false;
  bool divergent = false;
  double log_accept_ratio = 0.0;  // h0 - h1; -inf on divergence
  int gradient_evals = 0;         // density evaluations for rwm
};

struct MhDecision {
  Vector state;
  bool accepted;
};

// Accepts q1 iff b < min(1, exp(h0 - h1)); a non-finite h1 always rejects.
MhDecision mh_adjust(const Vector& q0, const Vector& q1, double h0, double h1, double b);
bool mh_accept(double h0, double h1, double b) noexcept;

Transition hmc_step(const TargetDensity& target, const ChainState& current,
                    const StepNoise& noise, const KernelConfig& config,
                    NoiseSign sign = NoiseSign::plus);
Transition mala_step(const TargetDensity& target, const ChainState& current,
                     const StepNoise& noise, const KernelConfig& config,
                     NoiseSign sign = NoiseSign::plus);
Transition rwm_step(const TargetDensity& target, const ChainState& current,
                    const StepNoise& noise, const KernelConfig& config,
                    NoiseSign sign = NoiseSign::plus);
// Dispatches on config.kind.
Transition kernel_step(const TargetDensity& target, const ChainState& current,
                       const StepNoise& noise, const KernelConfig& config,
                       NoiseSign sign = NoiseSign::plus);

// Row i of `samples` is the state after transition i (X_{i+1}).
struct ChainTrace {
  Matrix samples;
  std::vector<std::uint8_t> accepted;
  Vector log_accept_ratio;
  long gradient_evals = 0;
  int divergences = 0;

  Eigen::Index steps() const { return samples.rows(); }
  double acceptance_rate(Eigen::Index from = 0) const;
  // Rows from `burn_in` on.
  Matrix post_burn_in(Eigen::Index burn_in) const;
};

// Steps one chain with a fixed noise sign. Lets coupled drivers advance
// several chains in lockstep on the same NoiseStream.
class ChainRunner {
 public:
  ChainRunner(const TargetDensity& target, const Vector& start, const KernelConfig& config,
              NoiseSign sign);

  void step(std::uint64_t index, const StepNoise& noise);
  const ChainState& state() const { return state_; }
  const ChainTrace& trace() const { return trace_; }
  ChainTrace take_trace() { return std::move(trace_); }

 private:
  const TargetDensity* target_;
  const KernelConfig* config_;
  NoiseSign sign_;
  ChainState state_;
  ChainTrace trace_;
};

ChainTrace run_chain(const TargetDensity& target, const Vector& start,
                     const KernelConfig& config, std::uint64_t seed,
                     NoiseSign sign = NoiseSign::plus);

enum class CouplingMode { shared, antithetic };

// Aligned traces of a coupled group. `primary` is X (X+ under CVA).
struct CoupledTraces {
  ChainTrace primary;
  std::optional<ChainTrace> control;            // Y+ : shared noise, surrogate target
  std::optional<ChainTrace> antithetic;         // X- : negated noise, same target
  std::optional<ChainTrace> reflected_control;  // Y- = 2 mu - Y+
  std::uint64_t seed = 0;
  Vector center;  // mu
  long target_gradient_evals = 0;
  long surrogate_gradient_evals = 0;
};

// HMC-COUPLED (shared) / HMC-ANTITHETIC (antithetic) and their MALA/RWM
// analogues. In shared mode the partner is stored as `control`; in
// antithetic mode as `antithetic`. Partner gradients are billed to the
// surrogate unless target_y is the same object as target_x or the mode is
// antithetic. `center` defaults to zero.
CoupledTraces run_coupled(const TargetDensity& target_x, const TargetDensity& target_y,
                          const Vector& x0, const Vector& y0, CouplingMode mode,
                          const KernelConfig& config, std::uint64_t seed,
                          const std::optional<Vector>& center = std::nullopt);

// HMC-CVA: X+ and Y+ share noise, X- uses negated noise and the same
// uniforms, Y+ follows the surrogate, and Y- is the reflection 2 mu - Y+.
CoupledTraces run_cva(const TargetDensity& target, const TargetDensity& surrogate,
                      const Vector& x0_plus, const Vector& x0_minus, const Vector& y0_plus,
                      const KernelConfig& config, std::uint64_t seed);

}  // namespace swindle
