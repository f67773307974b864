#pragma once

#include "swindle/data_io.hpp"
#include "swindle/diagnostics.hpp"
#include "swindle/preconditioner.hpp"
#include "swindle/samplers.hpp"
#include "swindle/swindles.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace swindle {

// Process exit codes of the command-line driver.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfigError = 1,
  kExitNumericalFailure = 2,
  kExitStationarityWarning = 3,
};

struct GaussianTargetSpec {
  int dimension = 10;
  double mean = 0.0;          // every coordinate
  double stddev_min = 1.0;    // marginal scales are spaced linearly in [min, max]
  double stddev_max = 1.0;
  double correlation = 0.0;   // equicorrelation between all coordinates
};

struct DataSpec {
  std::string source = "synthetic";  // synthetic | german | irt
  std::string path;
  SynthParams synth;
  std::uint64_t seed = 1;
};

struct TargetSpec {
  std::string kind = "gaussian";  // gaussian | logistic | sparse | irt
  GaussianTargetSpec gaussian;
  DataSpec data;
  double test_fraction = 0.0;  // > 0 splits tabular data into train and test
  std::uint64_t split_seed = 1;
};

struct PreconditionerSpec {
  // vi | identity | exact (gaussian targets) | path to a map JSON file
  std::string map = "vi";
  // Sample in the latent space of the map. Otherwise chains run on the
  // target directly and the map only defines the surrogate.
  bool precondition = true;
  VIConfig vi;
  // Perturbation of the surrogate in sampling space: every coordinate of its
  // mean is shifted and its scale multiplied.
  double surrogate_shift = 0.0;
  double surrogate_scale = 1.0;
};

struct SweepSpec {
  // Either leapfrog step counts at a fixed trajectory length, or step sizes
  // at that length (the step count is rounded).
  double trajectory_length = 0.0;  // 0 keeps the hmc section's T
  std::vector<int> leapfrog_steps;
  std::vector<double> step_sizes;
  // How the ESS bound reads Phi: "inverse_cdf" (peaks near 0.65) or "cdf".
  std::string bound_reading = "inverse_cdf";
};

struct PredictSpec {
  // Evaluation budgets, counted in evaluations of f: one per plain draw,
  // two per control or antithetic pair, four per cva quadruple.
  std::vector<long> budgets{0, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024};
  bool diagonal_beta = true;
};

struct ExperimentConfig {
  TargetSpec target;
  PreconditionerSpec preconditioner;
  std::vector<KernelKind> kernels{KernelKind::hmc};
  LeapfrogConfig hmc{0.5, 4};
  double mala_step_size = 0.5;
  double rwm_step_size = 0.5;
  std::vector<EstimatorKind> estimators{EstimatorKind::plain, EstimatorKind::antithetic,
                                        EstimatorKind::control, EstimatorKind::cva};
  std::vector<std::string> functionals{"mean"};  // mean | variance | predictive
  int steps = 1000;
  int burn_in = 500;
  int chains = 64;
  int replications = 10;
  std::uint64_t seed = 0;
  double surrogate_cost = 0.2;  // relative cost of a surrogate gradient
  long eq_budget = 100000;      // draws for Monte Carlo estimates of E_Q
  bool beta_diagonal = false;
  bool rank_normalized_ess = false;
  double rhat_threshold = 1.01;
  int threads = 0;  // 0 uses every hardware thread
  SweepSpec sweep;
  PredictSpec predict;

  // Parses the JSON schema documented in the README; unknown keys are errors.
  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig load(const std::string& path);
  // Checks ranges and that dataset and map files exist. Throws ConfigError.
  void validate() const;
  KernelConfig kernel_config(KernelKind kind) const;
};

// Target, map and surrogate resolved from a config.
struct Problem {
  TargetPtr target;               // parameter space
  TargetPtr sampling_target;      // latent when preconditioned, else == target
  TransportMap map;               // latent -> parameter space
  GaussianDensity surrogate;      // Q in sampling space
  bool preconditioned = true;
  std::vector<double> elbo;       // filled when the map was fitted here
  std::optional<TabularDataset> train;
  std::optional<TabularDataset> test;

  // Map to apply before evaluating functionals (null when sampling in parameter space).
  const TransportMap* state_map() const { return preconditioned ? &map : nullptr; }
  // Map from sampling space to parameter space (identity when not preconditioned).
  TransportMap sampling_to_parameters() const;
};

Problem build_problem(const ExperimentConfig& config);
FunctionOfState make_functional(const std::string& name, const ExperimentConfig& config,
                                const Problem& problem);

// Seed of chain group `chain` in replication `replication`.
std::uint64_t group_seed(std::uint64_t base, int replication, int chain);

// Runs one HMC-CVA style group (X+, X-, Y+, Y-) from x0+ ~ Q, x0- = 2 mu - x0+,
// y0+ = x0+. Plain, antithetic and control estimators are read off the same
// group: X+ alone is an ordinary chain, (X+, X-) an antithetic pair and
// (X+, Y+) a control pair.
CoupledTraces run_group(const Problem& problem, const KernelConfig& kernel, std::uint64_t seed);

struct EssRow {
  int replication = 0;  // -1 for the mean over replications
  KernelKind kernel = KernelKind::hmc;
  EstimatorKind estimator = EstimatorKind::plain;
  std::string functional;
  int component = 0;
  double estimate = 0.0;
  double ess = 0.0;
  double ess_per_grad = 0.0;
  double ess_per_cost = 0.0;  // surrogate gradients weighted by surrogate_cost
  long grads = 0;
  long surrogate_grads = 0;
  double rho = 0.0;
  double vr_factor = 1.0;
  double rhat = 1.0;  // of the underlying X+ chains
};

struct CouplingRow {
  int replication = 0;
  KernelKind kernel = KernelKind::hmc;
  std::string partner;  // control | antithetic
  double acceptance = 0.0;
  double partner_acceptance = 0.0;
  double decoupling_rate = 0.0;
  double joint_rejection_rate = 0.0;
  double median_rho = 0.0;  // over the components of the first functional
  double contraction_rate = 0.0;  // NaN when undefined
};

struct SampleReport {
  std::vector<EssRow> ess_rows;
  std::vector<CouplingRow> coupling_rows;
  double max_rhat = 1.0;
  bool stationarity_warning = false;
  std::vector<std::string> warnings;

  // Median over components of the replication-mean ESS per gradient.
  double median_ess_per_grad(KernelKind kernel, EstimatorKind estimator,
                             const std::string& functional) const;
  double max_rhat_for(KernelKind kernel) const;
};

SampleReport run_sample(const ExperimentConfig& config, const Problem& problem);

struct SweepRow {
  int index = 0;
  double step_size = 0.0;
  int leapfrog_steps = 0;
  double acceptance = 0.0;
  double rho_control = 0.0;
  double rho_antithetic = 0.0;
  double decoupling_rate = 0.0;
  std::vector<std::pair<EstimatorKind, double>> ess_per_grad;  // median over components
  double predicted_plain = 0.0;    // NaN when the curve is skipped
  double predicted_control = 0.0;

  double ess_for(EstimatorKind kind) const;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::optional<TuningCurve> plain_curve;
  std::optional<TuningCurve> control_curve;
  std::string notice;  // set when the tuning curve was skipped

  // Row with the highest measured ESS/grad for an estimator.
  int best_index(EstimatorKind kind) const;
  // Row whose acceptance is closest to the curve's recommendation (-1 if skipped).
  int recommended_index(VarianceReduction kind) const;
};

SweepReport run_sweep(const ExperimentConfig& config, const Problem& problem);

struct PredictRow {
  int replication = 0;  // -1 for the median over replications
  std::string estimator;  // map | plain | antithetic | control | cva
  long budget = 0;
  double nll = 0.0;
};

struct PredictReport {
  std::vector<PredictRow> rows;
  double map_nll = 0.0;
  Vector map_weights;

  // Median over replications; NaN when no row matches.
  double median_nll(const std::string& estimator, long budget) const;
};

PredictReport run_predict(const ExperimentConfig& config, const Problem& problem);

// Minimizes U with BFGS and an Armijo line search until |grad U| < tolerance.
// Throws NumericalError when it fails to converge.
Vector find_map(const TargetDensity& target, const Vector& start, double tolerance = 1e-6,
                int max_iterations = 2000);

// Mean test negative log-likelihood of predicted probabilities, clipped to
// [1e-12, 1 - 1e-12].
double mean_nll(const Vector& probabilities, const Vector& labels);

void write_elbo_csv(const std::string& path, const std::vector<double>& elbo);
void write_ess_table(const std::string& path, const SampleReport& report);
void write_coupling_stats(const std::string& path, const SampleReport& report);
void write_sweep(const std::string& path, const SweepReport& report);
void write_predict(const std::string& path, const PredictReport& report);

// Subcommands; write their tables into `out_dir` and return an ExitCode.
// Errors propagate as exceptions; run_command maps them to exit codes.
int cmd_fit(const ExperimentConfig& config, const std::string& out_dir);
int cmd_sample(const ExperimentConfig& config, const std::string& out_dir);
int cmd_sweep(const ExperimentConfig& config, const std::string& out_dir);
int cmd_predict(const ExperimentConfig& config, const std::string& out_dir);

// Loads the config, applies overrides, dispatches and converts exceptions to
// exit codes with a message on stderr.
struct CommandOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> replications;
};
int run_command(const std::string& command, const std::string& config_path,
                const std::string& out_dir, const CommandOverrides& overrides);

}  // namespace swindle
