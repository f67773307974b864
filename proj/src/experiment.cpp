#include "swindle/experiment.hpp"

#include "swindle/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace swindle {
namespace {

using nlohmann::json;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ------------------------------------------------------------------ config

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

std::vector<std::string> string_list(const json& v, const std::string& where) {
  if (v.is_string()) return {v.get<std::string>()};
  if (!v.is_array()) throw ConfigError(where + " must be a string or a list of strings");
  return v.get<std::vector<std::string>>();
}

// --------------------------------------------------------------- parallel

template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  unsigned workers = threads > 0 ? static_cast<unsigned>(threads)
                                 : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ------------------------------------------------------------------ output

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  return out;
}

double median(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double median(const Vector& v) { return median(std::vector<double>(v.data(), v.data() + v.size())); }

Matrix stack(const std::vector<Matrix>& parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Matrix out(rows, parts.front().cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return out;
}

// ------------------------------------------------------------------ problem

struct BaseTarget {
  TargetPtr target;
  std::optional<TabularDataset> train;
  std::optional<TabularDataset> test;
  std::optional<GaussianDensity> gaussian;
};

BaseTarget build_base(const ExperimentConfig& cfg) {
  const auto& spec = cfg.target;
  BaseTarget out;
  if (spec.kind == "gaussian") {
    const auto& g = spec.gaussian;
    const Eigen::Index d = g.dimension;
    const Vector sd = d == 1 ? Vector(Vector::Constant(1, g.stddev_min))
                             : Vector(Vector::LinSpaced(d, g.stddev_min, g.stddev_max));
    const Vector mean = Vector::Constant(d, g.mean);
    if (g.correlation == 0.0) {
      out.gaussian = GaussianDensity::diagonal(mean, sd);
    } else {
      Matrix corr = Matrix::Constant(d, d, g.correlation);
      corr.diagonal().setOnes();
      out.gaussian = GaussianDensity::from_covariance(mean, sd.asDiagonal() * corr * sd.asDiagonal());
    }
    out.target = std::make_shared<GaussianDensity>(*out.gaussian);
    return out;
  }

  if (spec.kind == "irt") {
    ResponseDataset data = spec.data.source == "synthetic"
                               ? synth_dataset(SynthKind::irt, spec.data.synth, spec.data.seed).responses
                               : load_irt(spec.data.path);
    out.target = std::make_shared<ItemResponseDensity>(std::move(data.responses), data.students,
                                                       data.questions);
    return out;
  }

  TabularDataset data;
  if (spec.data.source == "synthetic") {
    const auto kind = spec.kind == "sparse" ? SynthKind::sparse : SynthKind::logistic;
    data = synth_dataset(kind, spec.data.synth, spec.data.seed).tabular;
  } else {
    data = load_german_credit(spec.data.path);
  }
  if (spec.test_fraction > 0.0) {
    auto [train, test] = train_test_split(data, spec.test_fraction, spec.split_seed);
    out.train = std::move(train);
    out.test = std::move(test);
  } else {
    out.train = std::move(data);
  }
  const Matrix design = out.train->design_matrix();
  if (spec.kind == "sparse") {
    out.target = std::make_shared<SparseLogisticRegressionDensity>(design, out.train->labels);
  } else {
    out.target = std::make_shared<LogisticRegressionDensity>(design, out.train->labels);
  }
  return out;
}

VIConfig vi_config(const ExperimentConfig& cfg) {
  VIConfig vi = cfg.preconditioner.vi;
  vi.seed = derive_seed(cfg.seed, cfg.preconditioner.vi.seed);
  return vi;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// -------------------------------------------------------------- estimators

struct GroupResult {
  std::vector<FunctionalValues> values;  // one per functional
  std::optional<CouplingStats> control_stats;
  std::optional<CouplingStats> antithetic_stats;
};

GroupResult evaluate_group(const Problem& problem, const KernelConfig& kernel, std::uint64_t seed,
                           const std::vector<FunctionOfState>& fs) {
  const CoupledTraces traces = run_group(problem, kernel, seed);
  GroupResult out;
  for (const auto& f : fs) {
    out.values.push_back(functional_values(traces, f, kernel.burn_in, problem.state_map()));
  }
  out.control_stats =
      coupling_stats(traces, fs.front(), kernel.burn_in, problem.state_map(), Partner::control);
  out.antithetic_stats =
      coupling_stats(traces, fs.front(), kernel.burn_in, problem.state_map(), Partner::antithetic);
  return out;
}

std::vector<GroupResult> run_replication(const ExperimentConfig& cfg, const Problem& problem,
                                         const KernelConfig& kernel, int replication,
                                         const std::vector<FunctionOfState>& fs) {
  std::vector<GroupResult> groups(static_cast<std::size_t>(cfg.chains));
  parallel_for(groups.size(), cfg.threads, [&](std::size_t c) {
    groups[c] = evaluate_group(problem, kernel, group_seed(cfg.seed, replication, static_cast<int>(c)),
                               fs);
  });
  return groups;
}

std::vector<FunctionalValues> values_of(const std::vector<GroupResult>& groups, std::size_t fi) {
  std::vector<FunctionalValues> out;
  out.reserve(groups.size());
  for (const auto& g : groups) out.push_back(g.values[fi]);
  return out;
}

CouplingRow summarize_coupling(const std::vector<GroupResult>& groups, bool control, int replication,
                               KernelKind kernel) {
  CouplingRow row;
  row.replication = replication;
  row.kernel = kernel;
  row.partner = control ? "control" : "antithetic";
  Vector rho_sum;
  std::vector<double> contraction;
  for (const auto& g : groups) {
    const CouplingStats& s = control ? *g.control_stats : *g.antithetic_stats;
    row.acceptance += s.primary_acceptance;
    row.partner_acceptance += s.partner_acceptance;
    row.decoupling_rate += s.decoupling_rate;
    row.joint_rejection_rate += s.joint_rejection_rate;
    const Vector rho = s.rho.unaryExpr([](double v) { return std::isnan(v) ? 1.0 : v; });
    rho_sum = rho_sum.size() ? Vector(rho_sum + rho) : rho;
    contraction.push_back(s.contraction_rate.value_or(kNaN));
  }
  const double n = static_cast<double>(groups.size());
  row.acceptance /= n;
  row.partner_acceptance /= n;
  row.decoupling_rate /= n;
  row.joint_rejection_rate /= n;
  row.median_rho = median(Vector(rho_sum / n));
  row.contraction_rate = median(contraction);
  return row;
}

long estimator_cost(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::plain: return 1;
    case EstimatorKind::antithetic: return 2;
    case EstimatorKind::control: return 2;
    case EstimatorKind::cva: return 4;
  }
  return 1;
}

}  // namespace

// ------------------------------------------------------------------ config

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  try {
    check_keys(doc, "config",
               {"target", "preconditioner", "kernel", "kernels", "hmc", "mala", "rwm", "estimators",
                "functionals", "steps", "burn_in", "chains", "replications", "seed",
                "surrogate_cost", "eq_budget", "beta_diagonal", "rank_normalized_ess",
                "rhat_threshold", "threads", "sweep", "predict"});
    if (doc.contains("target")) {
      const auto& t = doc["target"];
      check_keys(t, "target", {"kind", "gaussian", "data", "test_fraction", "split_seed"});
      read(t, "kind", cfg.target.kind);
      read(t, "test_fraction", cfg.target.test_fraction);
      read(t, "split_seed", cfg.target.split_seed);
      if (t.contains("gaussian")) {
        const auto& g = t["gaussian"];
        check_keys(g, "target.gaussian",
                   {"dimension", "mean", "stddev_min", "stddev_max", "correlation"});
        read(g, "dimension", cfg.target.gaussian.dimension);
        read(g, "mean", cfg.target.gaussian.mean);
        read(g, "stddev_min", cfg.target.gaussian.stddev_min);
        read(g, "stddev_max", cfg.target.gaussian.stddev_max);
        read(g, "correlation", cfg.target.gaussian.correlation);
      }
      if (t.contains("data")) {
        const auto& d = t["data"];
        check_keys(d, "target.data",
                   {"source", "path", "seed", "rows", "covariates", "weight_scale", "students",
                    "questions", "response_fraction"});
        read(d, "source", cfg.target.data.source);
        read(d, "path", cfg.target.data.path);
        read(d, "seed", cfg.target.data.seed);
        auto& s = cfg.target.data.synth;
        read(d, "rows", s.rows);
        read(d, "covariates", s.covariates);
        read(d, "weight_scale", s.weight_scale);
        read(d, "students", s.students);
        read(d, "questions", s.questions);
        read(d, "response_fraction", s.response_fraction);
      }
    }
    if (doc.contains("preconditioner")) {
      const auto& p = doc["preconditioner"];
      check_keys(p, "preconditioner",
                 {"map", "precondition", "vi", "surrogate_shift", "surrogate_scale"});
      read(p, "map", cfg.preconditioner.map);
      read(p, "precondition", cfg.preconditioner.precondition);
      read(p, "surrogate_shift", cfg.preconditioner.surrogate_shift);
      read(p, "surrogate_scale", cfg.preconditioner.surrogate_scale);
      if (p.contains("vi")) {
        const auto& v = p["vi"];
        check_keys(v, "preconditioner.vi",
                   {"steps", "batch_size", "learning_rate", "final_learning_rate_fraction",
                    "averaging_fraction", "diagonal", "seed"});
        auto& vi = cfg.preconditioner.vi;
        read(v, "steps", vi.steps);
        read(v, "batch_size", vi.batch_size);
        read(v, "learning_rate", vi.learning_rate);
        read(v, "final_learning_rate_fraction", vi.final_learning_rate_fraction);
        read(v, "averaging_fraction", vi.averaging_fraction);
        read(v, "diagonal", vi.diagonal);
        read(v, "seed", vi.seed);
      }
    }
    if (doc.contains("kernel") && doc.contains("kernels")) {
      throw ConfigError("config: give either 'kernel' or 'kernels', not both");
    }
    for (const char* key : {"kernel", "kernels"}) {
      if (doc.contains(key)) {
        cfg.kernels.clear();
        for (const auto& k : string_list(doc[key], key)) cfg.kernels.push_back(kernel_kind_from_string(k));
      }
    }
    if (doc.contains("hmc")) {
      const auto& h = doc["hmc"];
      check_keys(h, "hmc", {"step_size", "leapfrog_steps", "trajectory_length"});
      read(h, "leapfrog_steps", cfg.hmc.steps);
      if (h.contains("trajectory_length")) {
        if (h.contains("step_size")) {
          throw ConfigError("hmc: give step_size or trajectory_length, not both");
        }
        cfg.hmc = LeapfrogConfig::with_trajectory_length(h["trajectory_length"].get<double>(),
                                                         cfg.hmc.steps);
      }
      read(h, "step_size", cfg.hmc.step_size);
    }
    if (doc.contains("mala")) {
      check_keys(doc["mala"], "mala", {"step_size"});
      read(doc["mala"], "step_size", cfg.mala_step_size);
    }
    if (doc.contains("rwm")) {
      check_keys(doc["rwm"], "rwm", {"step_size"});
      read(doc["rwm"], "step_size", cfg.rwm_step_size);
    }
    if (doc.contains("estimators")) {
      cfg.estimators.clear();
      for (const auto& e : string_list(doc["estimators"], "estimators")) {
        cfg.estimators.push_back(estimator_kind_from_string(e));
      }
    }
    if (doc.contains("functionals")) cfg.functionals = string_list(doc["functionals"], "functionals");
    read(doc, "steps", cfg.steps);
    read(doc, "burn_in", cfg.burn_in);
    read(doc, "chains", cfg.chains);
    read(doc, "replications", cfg.replications);
    read(doc, "seed", cfg.seed);
    read(doc, "surrogate_cost", cfg.surrogate_cost);
    read(doc, "eq_budget", cfg.eq_budget);
    read(doc, "beta_diagonal", cfg.beta_diagonal);
    read(doc, "rank_normalized_ess", cfg.rank_normalized_ess);
    read(doc, "rhat_threshold", cfg.rhat_threshold);
    read(doc, "threads", cfg.threads);
    if (doc.contains("sweep")) {
      const auto& s = doc["sweep"];
      check_keys(s, "sweep", {"trajectory_length", "leapfrog_steps", "step_sizes", "bound_reading"});
      read(s, "bound_reading", cfg.sweep.bound_reading);
      read(s, "trajectory_length", cfg.sweep.trajectory_length);
      read(s, "leapfrog_steps", cfg.sweep.leapfrog_steps);
      read(s, "step_sizes", cfg.sweep.step_sizes);
    }
    if (doc.contains("predict")) {
      const auto& p = doc["predict"];
      check_keys(p, "predict", {"budgets", "diagonal_beta"});
      read(p, "budgets", cfg.predict.budgets);
      read(p, "diagonal_beta", cfg.predict.diagonal_beta);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  return from_json(read_file(path));
}

void ExperimentConfig::validate() const {
  const std::set<std::string> kinds{"gaussian", "logistic", "sparse", "irt"};
  if (!kinds.count(target.kind)) throw ConfigError("target.kind '" + target.kind + "' is unknown");
  if (target.kind == "gaussian") {
    const auto& g = target.gaussian;
    if (g.dimension < 1) throw ConfigError("target.gaussian.dimension must be >= 1");
    if (!(g.stddev_min > 0.0) || !(g.stddev_max > 0.0)) {
      throw ConfigError("target.gaussian stddevs must be positive");
    }
    if (!(g.correlation > -1.0 / std::max(1, g.dimension - 1)) || !(g.correlation < 1.0)) {
      throw ConfigError("target.gaussian.correlation does not give a positive definite matrix");
    }
  } else {
    const auto& d = target.data;
    const bool tabular = target.kind != "irt";
    const std::string file_source = tabular ? "german" : "irt";
    if (d.source != "synthetic" && d.source != file_source) {
      throw ConfigError("target.data.source must be 'synthetic' or '" + file_source + "'");
    }
    if (d.source != "synthetic") {
      if (d.path.empty()) throw ConfigError("target.data.path is required for source '" + d.source + "'");
      if (!std::filesystem::exists(d.path)) {
        throw ConfigError("dataset '" + d.path + "' does not exist");
      }
    }
    if (!(target.test_fraction >= 0.0 && target.test_fraction < 1.0)) {
      throw ConfigError("target.test_fraction must lie in [0, 1)");
    }
    if (target.test_fraction > 0.0 && !tabular) {
      throw ConfigError("target.test_fraction applies to tabular targets only");
    }
  }
  const auto& p = preconditioner;
  if (p.map != "vi" && p.map != "identity" && p.map != "exact" && !std::filesystem::exists(p.map)) {
    throw ConfigError("preconditioner.map '" + p.map + "' is neither a mode nor an existing file");
  }
  if (p.map == "exact" && target.kind != "gaussian") {
    throw ConfigError("preconditioner.map 'exact' needs a gaussian target");
  }
  if (!(p.surrogate_scale > 0.0)) throw ConfigError("preconditioner.surrogate_scale must be > 0");
  p.vi.validate();
  if (kernels.empty()) throw ConfigError("at least one kernel is required");
  if (estimators.empty()) throw ConfigError("at least one estimator is required");
  if (functionals.empty()) throw ConfigError("at least one functional is required");
  for (const auto& f : functionals) {
    if (f != "mean" && f != "variance" && f != "predictive") {
      throw ConfigError("functional '" + f + "' is unknown");
    }
    if (f == "predictive" && (target.kind != "logistic" || target.test_fraction <= 0.0)) {
      throw ConfigError("the predictive functional needs a logistic target with a test split");
    }
  }
  if (chains < 2) throw ConfigError("chains must be >= 2");
  if (replications < 1) throw ConfigError("replications must be >= 1");
  if (steps - burn_in < 8) throw ConfigError("need at least 8 post-burn-in steps");
  if (eq_budget < 1000) throw ConfigError("eq_budget must be >= 1000");
  if (!(surrogate_cost >= 0.0)) throw ConfigError("surrogate_cost must be >= 0");
  if (!(rhat_threshold > 1.0)) throw ConfigError("rhat_threshold must be > 1");
  if (sweep.bound_reading != "inverse_cdf" && sweep.bound_reading != "cdf") {
    throw ConfigError("sweep.bound_reading must be 'inverse_cdf' or 'cdf'");
  }
  for (auto k : kernels) kernel_config(k).validate();
}

KernelConfig ExperimentConfig::kernel_config(KernelKind kind) const {
  KernelConfig k;
  k.kind = kind;
  k.leapfrog = hmc;
  k.step_size = kind == KernelKind::mala ? mala_step_size : rwm_step_size;
  k.steps = steps;
  k.burn_in = burn_in;
  return k;
}

// ----------------------------------------------------------------- problem

TransportMap Problem::sampling_to_parameters() const {
  return preconditioned ? map : TransportMap::identity(map.dimension());
}

Problem build_problem(const ExperimentConfig& cfg) {
  BaseTarget base = build_base(cfg);
  const auto d = base.target->dimension();
  const auto& p = cfg.preconditioner;
  std::vector<double> elbo;
  std::optional<TransportMap> map;
  if (p.map == "vi") {
    VIFit fit = fit_affine_vi(*base.target, vi_config(cfg));
    map = std::move(fit.map);
    elbo = std::move(fit.elbo);
  } else if (p.map == "identity") {
    map = TransportMap::identity(d);
  } else if (p.map == "exact") {
    map = TransportMap(base.gaussian->scale_lower(), base.gaussian->mean());
  } else {
    map = TransportMap::from_json(read_file(p.map));
    if (map->dimension() != d) throw ConfigError("map file dimension does not match the target");
  }

  TargetPtr sampling = p.precondition
                           ? TargetPtr(std::make_shared<PreconditionedTarget>(base.target, *map))
                           : base.target;
  const Vector shift = Vector::Constant(d, p.surrogate_shift);
  GaussianDensity surrogate =
      p.precondition ? GaussianDensity::diagonal(shift, Vector::Constant(d, p.surrogate_scale))
                     : GaussianDensity(map->shift() + shift, p.surrogate_scale * map->scale());
  return Problem{base.target,          sampling,          std::move(*map),
                 std::move(surrogate), p.precondition,   std::move(elbo),
                 std::move(base.train), std::move(base.test)};
}

FunctionOfState make_functional(const std::string& name, const ExperimentConfig&,
                                const Problem& problem) {
  const auto d = problem.target->dimension();
  if (name == "mean") return FunctionOfState::mean(d);
  if (name == "variance") {
    // Centered at the surrogate mean in parameter space.
    return FunctionOfState::centered_square(
        problem.sampling_to_parameters().forward(problem.surrogate.mean()));
  }
  if (name == "predictive") {
    if (!problem.test) throw ConfigError("the predictive functional needs a test split");
    return FunctionOfState::predictive(problem.test->design_matrix());
  }
  throw ConfigError("functional '" + name + "' is unknown");
}

std::uint64_t group_seed(std::uint64_t base, int replication, int chain) {
  return derive_seed(derive_seed(base, static_cast<std::uint64_t>(replication)),
                     static_cast<std::uint64_t>(chain));
}

CoupledTraces run_group(const Problem& problem, const KernelConfig& kernel, std::uint64_t seed) {
  const auto d = problem.sampling_target->dimension();
  CounterRng init(seed, 0, StreamTag::initial_state);
  const Vector x0 = problem.surrogate.transform(init.normal_vector(d));
  const Vector xm = 2.0 * problem.surrogate.mean() - x0;
  return run_cva(*problem.sampling_target, problem.surrogate, x0, xm, x0, kernel, seed);
}

// ------------------------------------------------------------------ sample

double SampleReport::median_ess_per_grad(KernelKind kernel, EstimatorKind estimator,
                                         const std::string& functional) const {
  std::vector<double> values;
  for (const auto& r : ess_rows) {
    if (r.replication == -1 && r.kernel == kernel && r.estimator == estimator &&
        r.functional == functional) {
      values.push_back(r.ess_per_grad);
    }
  }
  return median(values);
}

double SampleReport::max_rhat_for(KernelKind kernel) const {
  double worst = 1.0;
  for (const auto& r : ess_rows) {
    if (r.replication >= 0 && r.kernel == kernel) worst = std::max(worst, r.rhat);
  }
  return worst;
}

SampleReport run_sample(const ExperimentConfig& cfg, const Problem& problem) {
  SampleReport report;
  std::vector<FunctionOfState> fs;
  for (const auto& name : cfg.functionals) fs.push_back(make_functional(name, cfg, problem));

  const bool wants_antithetic =
      std::find(cfg.estimators.begin(), cfg.estimators.end(), EstimatorKind::antithetic) !=
      cfg.estimators.end();
  if (wants_antithetic &&
      std::find(cfg.functionals.begin(), cfg.functionals.end(), "variance") != cfg.functionals.end()) {
    report.warnings.push_back(
        "note: the variance functional is symmetric about the center, so antithetic coupling "
        "gives it little or no benefit");
  }

  const TransportMap to_params = problem.sampling_to_parameters();
  std::vector<SurrogateExpectation> expectations;
  for (std::size_t fi = 0; fi < fs.size(); ++fi) {
    expectations.push_back(surrogate_expectation(problem.surrogate, to_params, fs[fi],
                                                 cfg.eq_budget, derive_seed(cfg.seed, 1000 + fi)));
  }
  SwindleOptions opts;
  opts.beta.diagonal_only = cfg.beta_diagonal;
  opts.rank_normalized_ess = cfg.rank_normalized_ess;

  for (const auto kernel : cfg.kernels) {
    const KernelConfig kc = cfg.kernel_config(kernel);
    const std::size_t first_row = report.ess_rows.size();
    for (int r = 0; r < cfg.replications; ++r) {
      const auto groups = run_replication(cfg, problem, kc, r, fs);
      report.coupling_rows.push_back(summarize_coupling(groups, true, r, kernel));
      report.coupling_rows.push_back(summarize_coupling(groups, false, r, kernel));
      for (std::size_t fi = 0; fi < fs.size(); ++fi) {
        const auto values = values_of(groups, fi);
        std::vector<Matrix> plus;
        for (const auto& v : values) plus.push_back(v.plus);
        const Vector rh = rhat(plus);
        for (const auto kind : cfg.estimators) {
          const SwindleEstimate est = swindle_estimate(kind, values, expectations[fi], opts);
          for (Eigen::Index j = 0; j < est.estimates.size(); ++j) {
            EssRow row;
            row.replication = r;
            row.kernel = kernel;
            row.estimator = kind;
            row.functional = cfg.functionals[fi];
            row.component = static_cast<int>(j);
            row.estimate = est.estimates[j];
            row.ess = est.ess[j];
            row.grads = est.grads_used;
            row.surrogate_grads = est.surrogate_grads;
            row.ess_per_grad = est.ess[j] / static_cast<double>(est.grads_used);
            row.ess_per_cost = est.ess[j] / (static_cast<double>(est.grads_used) +
                                             cfg.surrogate_cost * est.surrogate_grads);
            row.rho = est.rho[j];
            row.vr_factor = est.vr_factor[j];
            row.rhat = rh[j];
            report.max_rhat = std::max(report.max_rhat, rh[j]);
            report.ess_rows.push_back(std::move(row));
          }
        }
      }
    }

    // Mean over replications, keyed by (estimator, functional, component).
    std::map<std::tuple<int, std::string, int>, std::pair<EssRow, int>> acc;
    std::vector<std::tuple<int, std::string, int>> order;
    for (std::size_t i = first_row; i < report.ess_rows.size(); ++i) {
      const auto& r = report.ess_rows[i];
      const auto key = std::make_tuple(static_cast<int>(r.estimator), r.functional, r.component);
      auto it = acc.find(key);
      if (it == acc.end()) {
        EssRow m = r;
        m.replication = -1;
        acc.emplace(key, std::make_pair(m, 1));
        order.push_back(key);
        continue;
      }
      EssRow& m = it->second.first;
      m.estimate += r.estimate;
      m.ess += r.ess;
      m.ess_per_grad += r.ess_per_grad;
      m.ess_per_cost += r.ess_per_cost;
      m.grads += r.grads;
      m.surrogate_grads += r.surrogate_grads;
      m.rho += r.rho;
      m.vr_factor += r.vr_factor;
      m.rhat = std::max(m.rhat, r.rhat);
      ++it->second.second;
    }
    for (const auto& key : order) {
      auto [m, n] = acc.at(key);
      const double dn = n;
      m.estimate /= dn;
      m.ess /= dn;
      m.ess_per_grad /= dn;
      m.ess_per_cost /= dn;
      m.grads /= n;
      m.surrogate_grads /= n;
      m.rho /= dn;
      m.vr_factor /= dn;
      report.ess_rows.push_back(m);
    }
  }
  report.stationarity_warning = report.max_rhat >= cfg.rhat_threshold;
  if (report.stationarity_warning) {
    report.warnings.push_back("warning: R-hat " + num(report.max_rhat) + " >= " +
                              num(cfg.rhat_threshold) + "; chains may not be stationary");
  }
  return report;
}

// ------------------------------------------------------------------- sweep

double SweepRow::ess_for(EstimatorKind kind) const {
  for (const auto& [k, v] : ess_per_grad) {
    if (k == kind) return v;
  }
  return kNaN;
}

int SweepReport::best_index(EstimatorKind kind) const {
  int best = -1;
  double value = -1.0;
  for (const auto& r : rows) {
    const double v = r.ess_for(kind);
    if (v > value) {
      value = v;
      best = r.index;
    }
  }
  return best;
}

int SweepReport::recommended_index(VarianceReduction kind) const {
  const auto& curve = kind == VarianceReduction::control ? control_curve : plain_curve;
  if (!curve) return -1;
  int best = -1;
  double distance = std::numeric_limits<double>::infinity();
  for (const auto& r : rows) {
    const double d = std::abs(r.acceptance - curve->recommended_acceptance);
    if (d < distance) {
      distance = d;
      best = r.index;
    }
  }
  return best;
}

SweepReport run_sweep(const ExperimentConfig& cfg, const Problem& problem) {
  const double length =
      cfg.sweep.trajectory_length > 0.0 ? cfg.sweep.trajectory_length : cfg.hmc.trajectory_length();
  std::vector<LeapfrogConfig> grid;
  for (const int l : cfg.sweep.leapfrog_steps) {
    if (l < 1) throw ConfigError("sweep: leapfrog step counts must be >= 1");
    grid.push_back(LeapfrogConfig::with_trajectory_length(length, l));
  }
  for (const double eps : cfg.sweep.step_sizes) {
    if (!(eps > 0.0)) throw ConfigError("sweep: step sizes must be positive");
    const int l = static_cast<int>(std::lround(length / eps));
    if (l < 1) {
      throw ConfigError("sweep: step size " + num(eps) + " gives fewer than one leapfrog step");
    }
    grid.push_back({eps, l});
  }
  if (grid.empty()) throw ConfigError("sweep: the grid is empty");

  const FunctionOfState f = make_functional(cfg.functionals.front(), cfg, problem);
  const auto expectation = surrogate_expectation(
      problem.surrogate, problem.sampling_to_parameters(), f, cfg.eq_budget, derive_seed(cfg.seed, 1000));
  SwindleOptions opts;
  opts.beta.diagonal_only = cfg.beta_diagonal;
  opts.rank_normalized_ess = cfg.rank_normalized_ess;

  SweepReport report;
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    KernelConfig kc = cfg.kernel_config(KernelKind::hmc);
    kc.leapfrog = grid[gi];
    SweepRow row;
    row.index = static_cast<int>(gi);
    row.step_size = grid[gi].step_size;
    row.leapfrog_steps = grid[gi].steps;
    std::map<EstimatorKind, Vector> ess_sum;
    for (int r = 0; r < cfg.replications; ++r) {
      const auto groups = run_replication(cfg, problem, kc, r, {f});
      const auto values = values_of(groups, 0);
      const CouplingRow c = summarize_coupling(groups, true, r, KernelKind::hmc);
      const CouplingRow a = summarize_coupling(groups, false, r, KernelKind::hmc);
      row.acceptance += c.acceptance;
      row.decoupling_rate += c.decoupling_rate;
      row.rho_control += c.median_rho;
      row.rho_antithetic += a.median_rho;
      for (const auto kind : cfg.estimators) {
        const SwindleEstimate est = swindle_estimate(kind, values, expectation, opts);
        const Vector per_grad = est.ess / static_cast<double>(est.grads_used);
        auto it = ess_sum.find(kind);
        if (it == ess_sum.end()) {
          ess_sum.emplace(kind, per_grad);
        } else {
          it->second += per_grad;
        }
      }
    }
    const double n = cfg.replications;
    row.acceptance /= n;
    row.decoupling_rate /= n;
    row.rho_control /= n;
    row.rho_antithetic /= n;
    for (const auto kind : cfg.estimators) {
      row.ess_per_grad.emplace_back(kind, median(Vector(ess_sum.at(kind) / n)));
    }
    row.predicted_plain = kNaN;
    row.predicted_control = kNaN;
    report.rows.push_back(std::move(row));
  }

  std::set<double> distinct;
  std::vector<PilotPoint> plain_pilots, control_pilots;
  for (const auto& r : report.rows) {
    const double a = std::clamp(r.acceptance, 1e-4, 1.0 - 1e-4);
    distinct.insert(a);
    plain_pilots.push_back({a, 0.0});
    if (!std::isnan(r.rho_control)) {
      control_pilots.push_back({a, std::clamp(r.rho_control, -1.0, 1.0)});
    }
  }
  if (report.rows.size() < 3 || distinct.size() < 2) {
    report.notice = "tuning curve skipped: it needs at least 3 grid points with 2 distinct acceptance rates";
    return report;
  }
  const auto reading =
      cfg.sweep.bound_reading == "cdf" ? BoundReading::cdf : BoundReading::inverse_cdf;
  report.plain_curve = tuning_curve(plain_pilots, VarianceReduction::none, reading);
  if (control_pilots.size() >= 3) {
    report.control_curve = tuning_curve(control_pilots, VarianceReduction::control, reading);
  }
  auto value_at = [](const TuningCurve& c, double a) {
    const auto it = std::lower_bound(c.acceptance.begin(), c.acceptance.end(), a);
    std::size_t i = static_cast<std::size_t>(it - c.acceptance.begin());
    if (i >= c.acceptance.size()) i = c.acceptance.size() - 1;
    if (i > 0 && std::abs(c.acceptance[i - 1] - a) < std::abs(c.acceptance[i] - a)) --i;
    return c.predicted[i];
  };
  for (auto& r : report.rows) {
    const double a = std::clamp(r.acceptance, 1e-4, 1.0 - 1e-4);
    r.predicted_plain = value_at(*report.plain_curve, a);
    if (report.control_curve) r.predicted_control = value_at(*report.control_curve, a);
  }
  return report;
}

// ----------------------------------------------------------------- predict

double mean_nll(const Vector& probabilities, const Vector& labels) {
  if (probabilities.size() != labels.size() || labels.size() == 0) {
    throw ContractError("mean_nll: size mismatch");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(probabilities[i], 1e-12, 1.0 - 1e-12);
    total -= labels[i] > 0.5 ? std::log(p) : std::log1p(-p);
  }
  return total / static_cast<double>(labels.size());
}

Vector find_map(const TargetDensity& target, const Vector& start, double tolerance,
                int max_iterations) {
  const auto d = target.dimension();
  Vector x = start;
  Vector g;
  double u = target.potential_and_gradient(x, g);
  Matrix h_inv = Matrix::Identity(d, d);
  for (int it = 0; it < max_iterations; ++it) {
    if (!std::isfinite(u) || !g.allFinite()) throw NumericalError("map: non-finite objective");
    if (g.norm() < tolerance) return x;
    Vector dir = -h_inv * g;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      h_inv.setIdentity();
      dir = -g;
      slope = -g.squaredNorm();
    }
    double step = 1.0;
    Vector x_new, g_new;
    double u_new = 0.0;
    bool found = false;
    for (int k = 0; k < 60; ++k) {
      x_new = x + step * dir;
      u_new = target.potential_and_gradient(x_new, g_new);
      if (std::isfinite(u_new) && u_new <= u + 1e-4 * step * slope) {
        found = true;
        break;
      }
      step *= 0.5;
    }
    if (!found) {
      if (g.norm() < 100.0 * tolerance) return x;
      throw NumericalError("map: line search failed at iteration " + std::to_string(it));
    }
    const Vector s = x_new - x;
    const Vector y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Matrix left = Matrix::Identity(d, d) - rho * s * y.transpose();
      h_inv = left * h_inv * left.transpose() + rho * s * s.transpose();
    }
    x = std::move(x_new);
    g = std::move(g_new);
    u = u_new;
  }
  if (g.norm() < tolerance) return x;
  throw NumericalError("map: BFGS did not reach the gradient tolerance");
}

double PredictReport::median_nll(const std::string& estimator, long budget) const {
  for (const auto& r : rows) {
    if (r.replication == -1 && r.estimator == estimator && r.budget == budget) return r.nll;
  }
  return kNaN;
}

PredictReport run_predict(const ExperimentConfig& cfg, const Problem& problem) {
  if (cfg.target.kind != "logistic" || !problem.test) {
    throw ConfigError("predict: needs a logistic target with a train/test split");
  }
  for (const long b : cfg.predict.budgets) {
    if (b < 0) throw ConfigError("predict: budgets must be >= 0");
  }
  const Matrix test_design = problem.test->design_matrix();
  const Vector& test_labels = problem.test->labels;
  const FunctionOfState f = FunctionOfState::predictive(test_design);

  PredictReport report;
  report.map_weights = find_map(*problem.target, Vector::Zero(problem.target->dimension()));
  report.map_nll = mean_nll(f(report.map_weights), test_labels);

  const auto expectation = surrogate_expectation(
      problem.surrogate, problem.sampling_to_parameters(), f, cfg.eq_budget, derive_seed(cfg.seed, 2000));
  BetaOptions beta_opts;
  beta_opts.diagonal_only = cfg.predict.diagonal_beta;
  const KernelConfig kc = cfg.kernel_config(cfg.kernels.front());

  for (int r = 0; r < cfg.replications; ++r) {
    const auto groups = run_replication(cfg, problem, kc, r, {f});
    const auto values = values_of(groups, 0);
    const auto c = static_cast<Eigen::Index>(values.size());
    const Eigen::Index n_post = values.front().plus.rows();

    std::vector<Matrix> xp, xm, yp, ym;
    for (const auto& v : values) {
      xp.push_back(v.plus);
      xm.push_back(*v.minus);
      yp.push_back(*v.control);
      ym.push_back(*v.reflected);
    }
    ControlVariateFit control_fit = estimate_beta(stack(xp), stack(yp), beta_opts);
    control_fit.expectation = expectation;
    std::vector<Matrix> xs = xp, ys = yp;
    xs.insert(xs.end(), xm.begin(), xm.end());
    ys.insert(ys.end(), ym.begin(), ym.end());
    ControlVariateFit cva_fit = estimate_beta(stack(xs), stack(ys), beta_opts);
    cva_fit.expectation = expectation;

    // Draw i comes from chain i mod C, counting back from the last step.
    auto draw = [&](const std::vector<Matrix>& m, Eigen::Index i) -> Vector {
      return m[static_cast<std::size_t>(i % c)].row(n_post - 1 - i / c).transpose();
    };
    auto z = [&](const Vector& fx, const Vector& fy, const ControlVariateFit& fit) -> Vector {
      return fx - fit.beta * (fy - fit.expectation->mean);
    };

    for (const long budget : cfg.predict.budgets) {
      if (budget == 0) {
        report.rows.push_back({r, "map", 0, report.map_nll});
        continue;
      }
      for (const auto kind : cfg.estimators) {
        const long m = budget / estimator_cost(kind);
        if (m < 1 || m > c * n_post) continue;
        Vector sum = Vector::Zero(f.output_dimension());
        for (Eigen::Index i = 0; i < m; ++i) {
          switch (kind) {
            case EstimatorKind::plain: sum += draw(xp, i); break;
            case EstimatorKind::antithetic: sum += 0.5 * (draw(xp, i) + draw(xm, i)); break;
            case EstimatorKind::control: sum += z(draw(xp, i), draw(yp, i), control_fit); break;
            case EstimatorKind::cva:
              sum += 0.5 * (z(draw(xp, i), draw(yp, i), cva_fit) + z(draw(xm, i), draw(ym, i), cva_fit));
              break;
          }
        }
        report.rows.push_back({r, to_string(kind), budget, mean_nll(sum / static_cast<double>(m), test_labels)});
      }
    }
  }

  // Medians over replications in first-seen order.
  std::vector<std::pair<std::string, long>> keys;
  std::map<std::pair<std::string, long>, std::vector<double>> by_key;
  for (const auto& r : report.rows) {
    const auto key = std::make_pair(r.estimator, r.budget);
    if (!by_key.count(key)) keys.push_back(key);
    by_key[key].push_back(r.nll);
  }
  for (const auto& key : keys) report.rows.push_back({-1, key.first, key.second, median(by_key[key])});
  return report;
}

// ------------------------------------------------------------------ writers

void write_elbo_csv(const std::string& path, const std::vector<double>& elbo) {
  auto out = open_output(path);
  const auto s = smoothed(elbo, 100);
  out << "step,elbo,smoothed_elbo\n";
  for (std::size_t i = 0; i < elbo.size(); ++i) out << i << ',' << num(elbo[i]) << ',' << num(s[i]) << '\n';
}

void write_ess_table(const std::string& path, const SampleReport& report) {
  auto out = open_output(path);
  out << "replication,kernel,estimator,functional,component,estimate,ess,ess_per_grad,"
         "ess_per_cost,grads,surrogate_grads,rho,vr_factor,rhat\n";
  for (const auto& r : report.ess_rows) {
    out << (r.replication < 0 ? std::string("mean") : std::to_string(r.replication)) << ','
        << to_string(r.kernel) << ',' << to_string(r.estimator) << ',' << r.functional << ','
        << r.component << ',' << num(r.estimate) << ',' << num(r.ess) << ',' << num(r.ess_per_grad)
        << ',' << num(r.ess_per_cost) << ',' << r.grads << ',' << r.surrogate_grads << ','
        << num(r.rho) << ',' << num(r.vr_factor) << ',' << num(r.rhat) << '\n';
  }
}

void write_coupling_stats(const std::string& path, const SampleReport& report) {
  auto out = open_output(path);
  out << "replication,kernel,partner,acceptance,partner_acceptance,decoupling_rate,"
         "joint_rejection_rate,median_rho,contraction_rate\n";
  for (const auto& r : report.coupling_rows) {
    out << r.replication << ',' << to_string(r.kernel) << ',' << r.partner << ','
        << num(r.acceptance) << ',' << num(r.partner_acceptance) << ',' << num(r.decoupling_rate)
        << ',' << num(r.joint_rejection_rate) << ',' << num(r.median_rho) << ','
        << num(r.contraction_rate) << '\n';
  }
}

void write_sweep(const std::string& path, const SweepReport& report) {
  auto out = open_output(path);
  out << "index,step_size,leapfrog_steps,acceptance,rho_control,rho_antithetic,decoupling_rate";
  if (!report.rows.empty()) {
    for (const auto& [kind, v] : report.rows.front().ess_per_grad) out << ",ess_per_grad_" << to_string(kind);
  }
  out << ",predicted_plain,predicted_control\n";
  for (const auto& r : report.rows) {
    out << r.index << ',' << num(r.step_size) << ',' << r.leapfrog_steps << ',' << num(r.acceptance)
        << ',' << num(r.rho_control) << ',' << num(r.rho_antithetic) << ',' << num(r.decoupling_rate);
    for (const auto& [kind, v] : r.ess_per_grad) out << ',' << num(v);
    out << ',' << num(r.predicted_plain) << ',' << num(r.predicted_control) << '\n';
  }
}

void write_predict(const std::string& path, const PredictReport& report) {
  auto out = open_output(path);
  out << "replication,estimator,budget,nll\n";
  for (const auto& r : report.rows) {
    out << (r.replication < 0 ? std::string("median") : std::to_string(r.replication)) << ','
        << r.estimator << ',' << r.budget << ',' << num(r.nll) << '\n';
  }
}

// ----------------------------------------------------------------- commands

namespace {

std::string join(const std::string& dir, const char* file) {
  return (std::filesystem::path(dir) / file).string();
}

void write_text(const std::string& path, const std::string& text) {
  auto out = open_output(path);
  out << text;
}

}  // namespace

int cmd_fit(const ExperimentConfig& cfg, const std::string& out_dir) {
  const BaseTarget base = build_base(cfg);
  const VIFit fit = fit_affine_vi(*base.target, vi_config(cfg));
  write_text(join(out_dir, "map.json"), fit.map.to_json());
  write_elbo_csv(join(out_dir, "elbo.csv"), fit.elbo);
  const auto s = smoothed(fit.elbo, 100);
  std::cout << "fit: D=" << fit.map.dimension() << " final smoothed ELBO " << num(s.back()) << '\n';
  return kExitOk;
}

int cmd_sample(const ExperimentConfig& cfg, const std::string& out_dir) {
  const Problem problem = build_problem(cfg);
  if (!problem.elbo.empty()) {
    write_text(join(out_dir, "map.json"), problem.map.to_json());
    write_elbo_csv(join(out_dir, "elbo.csv"), problem.elbo);
  }
  const SampleReport report = run_sample(cfg, problem);
  for (const auto& w : report.warnings) std::cerr << w << '\n';
  write_ess_table(join(out_dir, "ess_table.csv"), report);
  write_coupling_stats(join(out_dir, "coupling_stats.csv"), report);
  std::cout << "median ESS per gradient (mean across " << cfg.replications
            << " independent runs):\n";
  for (const auto k : cfg.kernels) {
    for (const auto& fn : cfg.functionals) {
      for (const auto e : cfg.estimators) {
        std::cout << "  " << to_string(k) << ' ' << fn << ' ' << to_string(e) << ": "
                  << num(report.median_ess_per_grad(k, e, fn)) << '\n';
      }
    }
  }
  std::cout << "max R-hat " << num(report.max_rhat) << '\n';
  return report.stationarity_warning ? kExitStationarityWarning : kExitOk;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& out_dir) {
  const Problem problem = build_problem(cfg);
  const SweepReport report = run_sweep(cfg, problem);
  write_sweep(join(out_dir, "sweep.csv"), report);
  if (!report.notice.empty()) std::cerr << report.notice << '\n';
  if (report.plain_curve) {
    std::cout << "recommended acceptance (plain): " << num(report.plain_curve->recommended_acceptance)
              << '\n';
  }
  if (report.control_curve) {
    std::cout << "recommended acceptance (control): "
              << num(report.control_curve->recommended_acceptance) << '\n';
  }
  return kExitOk;
}

int cmd_predict(const ExperimentConfig& cfg, const std::string& out_dir) {
  const Problem problem = build_problem(cfg);
  const PredictReport report = run_predict(cfg, problem);
  write_predict(join(out_dir, "predict_nll.csv"), report);
  std::cout << "MAP test NLL " << num(report.map_nll) << '\n';
  return kExitOk;
}

int run_command(const std::string& command, const std::string& config_path,
                const std::string& out_dir, const CommandOverrides& overrides) {
  try {
    ExperimentConfig cfg = ExperimentConfig::load(config_path);
    if (overrides.seed) cfg.seed = *overrides.seed;
    if (overrides.replications) cfg.replications = *overrides.replications;
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    if (command == "fit") return cmd_fit(cfg, out_dir);
    if (command == "sample") return cmd_sample(cfg, out_dir);
    if (command == "sweep") return cmd_sweep(cfg, out_dir);
    if (command == "predict") return cmd_predict(cfg, out_dir);
    throw ConfigError("unknown command '" + command + "'");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumericalFailure;
  }
}

}  // namespace swindle
