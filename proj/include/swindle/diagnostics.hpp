#pragma once

#include "swindle/functions.hpp"
#include "swindle/samplers.hpp"

#include <optional>
#include <vector>

namespace swindle {

// ESS is never reported above kEssInflationBound * (total draws).
inline constexpr double kEssInflationBound = 10.0;

struct EssOptions {
  bool rank_normalized = false;
  // Report a capped super-efficient value instead of throwing when the
  // chains have zero variance (e.g. a perfectly antithetic average).
  bool allow_degenerate = false;
  // Denominator for ess_per_grad; left at 0 the field is empty.
  long gradient_evals = 0;
};

struct EssReport {
  Vector ess;                  // per component
  Vector ess_per_grad;         // per component, empty without gradient_evals
  std::vector<int> truncation_lag;
  std::vector<bool> capped;    // true where the inflation bound applied
  long draws = 0;              // total draws over all chains
};

// Multi-chain ESS for K scalar functionals. Each entry of `chains` is an
// n x K matrix. Autocorrelations are computed per chain, averaged with
// chain-length weights into rho_t = 1 - (W - acov_t) / var_plus, and the sum
// is truncated by Geyer's initial positive and monotone sequence.
EssReport ess(const std::vector<Matrix>& chains, const EssOptions& options = {});

// Split-chain potential scale reduction, one value per component.
Vector rhat(const std::vector<Matrix>& chains);

// Replaces every draw by the normal score of its pooled rank.
std::vector<Matrix> rank_normalize(const std::vector<Matrix>& chains);

// Per-column Pearson correlation of two equally shaped matrices.
Vector column_correlation(const Matrix& a, const Matrix& b);
// Pooled sample variance per column across a set of matrices.
Vector pooled_variance(const std::vector<Matrix>& chains);

enum class Partner { automatic, control, antithetic };

struct CouplingStats {
  Vector rho;                      // corr(f(X), f(partner)) per component
  double primary_acceptance = 0.0;
  double partner_acceptance = 0.0;
  double decoupling_rate = 0.0;    // fraction of steps with disagreeing MH decisions
  double joint_rejection_rate = 0.0;
  // exp(slope) of a least-squares fit to log distance over steps, where
  // distance is |X - Y| (shared) or |X + Y - 2 mu| (antithetic).
  std::optional<double> contraction_rate;
};

CouplingStats coupling_stats(const CoupledTraces& traces, const FunctionOfState& f,
                             Eigen::Index burn_in = 0, const TransportMap* map = nullptr,
                             Partner partner = Partner::automatic);

enum class VarianceReduction { none, control, antithetic };

// ESS_HMC / (1 - rho^2) (control) or 2 ESS_HMC / (1 + rho) (antithetic);
// `none` returns ESS_HMC unchanged. A perfect correlation
// returns +infinity.
double predict_vr_ess(double ess_hmc, double rho, VarianceReduction kind);

// How Phi enters a (Phi(1 - a/2))^0.5. The inverse-CDF reading is the
// optimal-scaling bound a * sqrt(Phi^{-1}(1 - a/2)), which peaks near
// a = 0.65; the literal CDF reading is monotone in a.
enum class BoundReading { inverse_cdf, cdf };

double ess_bound(double acceptance, BoundReading reading = BoundReading::inverse_cdf);

struct PilotPoint {
  double acceptance;
  double rho;
};

struct TuningCurve {
  std::vector<double> acceptance;  // evaluation grid within the pilot range
  std::vector<double> predicted;   // normalized so the maximum is 1
  std::vector<double> rho;         // interpolated rho at each grid point
  double normalizer = 1.0;         // C: 1 / max of the raw curve
  double recommended_acceptance = 0.0;
};

// Combines the ESS/grad bound with pilot estimates of rho (linearly
// interpolated in acceptance) through predict_vr_ess and reports the argmax.
TuningCurve tuning_curve(const std::vector<PilotPoint>& pilots, VarianceReduction kind,
                         BoundReading reading = BoundReading::inverse_cdf,
                         int grid_points = 981);

// Least-squares slope of log(distance) against step, skipping distances
// at or below `floor`. Empty when fewer than two points survive.
std::optional<double> log_distance_slope(const std::vector<double>& distances,
                                         double floor = 1e-12);

}  // namespace swindle
