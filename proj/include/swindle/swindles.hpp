#pragma once

#include "swindle/diagnostics.hpp"
#include "swindle/functions.hpp"
#include "swindle/preconditioner.hpp"
#include "swindle/samplers.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace swindle {

struct SurrogateExpectation {
  Vector mean;
  Vector standard_error;  // zero for closed forms
  bool closed_form = false;
  long draws = 0;
};

// E_Q[f] where Q is `surrogate` (sampling space) pushed through `map`.
// Closed form for the mean and centered-square functionals, otherwise an
// i.i.d. Monte Carlo average over `budget` exact draws.
SurrogateExpectation surrogate_expectation(const GaussianDensity& surrogate,
                                           const TransportMap& map, const FunctionOfState& f,
                                           long budget, std::uint64_t seed);

struct BetaOptions {
  // Regress f_j(X) on f_j(Y) alone instead of on all K components.
  bool diagonal_only = false;
  // Ridge added to the normal equations, relative to trace(F^T F) / K.
  double ridge_scale = 1e-8;
};

struct ControlVariateFit {
  Matrix beta;             // K x K; row j is beta_j
  Matrix beta_stderr;      // regression standard errors, same shape
  Vector residual_variance;
  Vector regressand_variance;
  std::optional<SurrogateExpectation> expectation;  // E_Q[f(Y)] used by Z
};

// Least squares of centered fx_j onto centered fy, one regression per j.
// Throws InsufficientDataError when n < K + 2.
ControlVariateFit estimate_beta(const Matrix& fx, const Matrix& fy,
                                const BetaOptions& options = {});

// Z_ij = f_j(X_i) - beta_j^T (f(Y_i) - E_Q[f(Y)]).
Matrix control_variate_chain(const Matrix& fx, const Matrix& fy, const ControlVariateFit& fit);

struct AntitheticAverage {
  Matrix average;
  Vector covariance;
  Vector correlation;
};

AntitheticAverage antithetic_average(const Matrix& fxp, const Matrix& fxm);

enum class EstimatorKind { plain, antithetic, control, cva };

std::string to_string(EstimatorKind kind);
EstimatorKind estimator_kind_from_string(const std::string& name);

struct SwindleEstimate {
  EstimatorKind kind = EstimatorKind::plain;
  Vector estimates;               // K
  std::vector<Matrix> z_chains;   // one post-burn-in chain per group
  Vector rho;                     // pairing correlation per component
  Vector vr_factor;               // Var f(X) / Var Z per component
  Vector ess;                     // ESS relative to Var_P f(X)
  Vector ess_self;                // autocorrelation ESS of the Z chains
  long grads_used = 0;            // target gradient evaluations
  long surrogate_grads = 0;

  std::string to_json() const;
};

// Combined CVA chain for one coupled group: Z+ from (X+, Y+), Z- from
// (X-, Y-) with the shared fit, Z = (Z+ + Z-) / 2.
SwindleEstimate cva_estimate(const CoupledTraces& traces, const FunctionOfState& f,
                             const ControlVariateFit& fit, Eigen::Index burn_in = 0,
                             const TransportMap* map = nullptr);

struct SwindleOptions {
  Eigen::Index burn_in = 0;
  const TransportMap* map = nullptr;
  BetaOptions beta;
  // A fit from independent data; when set, beta is not re-estimated.
  std::optional<ControlVariateFit> held_out_fit;
  bool rank_normalized_ess = false;
};

// Builds the estimator of the given kind over many coupled groups. Beta is
// estimated once from all post-burn-in pairs of all groups. `expectation`
// is required for control and cva.
SwindleEstimate swindle_estimate(EstimatorKind kind, const std::vector<CoupledTraces>& groups,
                                 const FunctionOfState& f,
                                 const std::optional<SurrogateExpectation>& expectation,
                                 const SwindleOptions& options = {});

// Post-burn-in f values of one coupled group, with the gradient bill of each
// chain. Lets callers drop the traces once f has been evaluated.
struct FunctionalValues {
  Matrix plus;
  std::optional<Matrix> minus;       // X-
  std::optional<Matrix> control;     // Y+
  std::optional<Matrix> reflected;   // Y-
  long plus_gradient_evals = 0;
  long minus_gradient_evals = 0;
  long control_gradient_evals = 0;
};

FunctionalValues functional_values(const CoupledTraces& traces, const FunctionOfState& f,
                                   Eigen::Index burn_in = 0, const TransportMap* map = nullptr);

// As above on pre-evaluated values; options.burn_in and options.map are ignored.
SwindleEstimate swindle_estimate(EstimatorKind kind, const std::vector<FunctionalValues>& groups,
                                 const std::optional<SurrogateExpectation>& expectation,
                                 const SwindleOptions& options = {});

}  // namespace swindle
