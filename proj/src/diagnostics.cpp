#include "swindle/diagnostics.hpp"

#include "swindle/errors.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace swindle {
namespace {

void check_chains(const std::vector<Matrix>& chains, Eigen::Index min_length) {
  if (chains.empty()) throw ContractError("diagnostics: need at least one chain");
  const auto k = chains.front().cols();
  for (const auto& c : chains) {
    if (c.cols() != k) throw ContractError("diagnostics: chains disagree on component count");
    if (c.rows() < min_length) {
      throw ContractError("diagnostics: each chain needs at least " +
                          std::to_string(min_length) + " draws");
    }
  }
}

double standard_normal_quantile(double p) {
  static const boost::math::normal_distribution<double> unit;
  return boost::math::quantile(unit, p);
}

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

struct ScalarEss {
  double ess;
  int lag;
  bool capped;
};

// One component across chains: columns[m] is chain m.
ScalarEss scalar_ess(const std::vector<Vector>& columns, bool allow_degenerate) {
  const auto m = static_cast<double>(columns.size());
  double total = 0.0;
  std::vector<double> means, weights;
  for (const auto& c : columns) {
    means.push_back(c.mean());
    weights.push_back(static_cast<double>(c.size()));
    total += static_cast<double>(c.size());
  }
  for (auto& w : weights) w /= total;
  const double n_bar = total / m;
  const double cap = kEssInflationBound * total;

  // Within-chain variance W and between-chain term B / n.
  double within = 0.0;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    const Vector centered = columns[i].array() - means[i];
    within += weights[i] * centered.squaredNorm() / (static_cast<double>(columns[i].size()) - 1.0);
  }
  double between_over_n = 0.0;
  if (columns.size() > 1) {
    double grand = 0.0;
    for (std::size_t i = 0; i < columns.size(); ++i) grand += weights[i] * means[i];
    for (std::size_t i = 0; i < columns.size(); ++i) {
      between_over_n += (means[i] - grand) * (means[i] - grand);
    }
    between_over_n /= (m - 1.0);
  }
  const double var_plus = (n_bar - 1.0) / n_bar * within + between_over_n;

  if (!(var_plus > 0.0)) {
    if (allow_degenerate) return {cap, 0, true};
    throw UndefinedEssError("ess: zero-variance chains have no effective sample size");
  }

  auto autocorrelation = [&](Eigen::Index lag) {
    double acov = 0.0;
    for (std::size_t i = 0; i < columns.size(); ++i) {
      const auto& c = columns[i];
      const auto n = c.size();
      if (lag >= n) continue;
      const auto head = c.head(n - lag).array() - means[i];
      const auto tail = c.tail(n - lag).array() - means[i];
      acov += weights[i] * (head * tail).sum() / static_cast<double>(n);
    }
    return 1.0 - (within - acov) / var_plus;
  };

  Eigen::Index min_n = columns.front().size();
  for (const auto& c : columns) min_n = std::min(min_n, c.size());

  // Geyer: pair sums P_k = rho_{2k} + rho_{2k+1} while positive, made monotone.
  double sum_pairs = 0.0;
  double previous_pair = std::numeric_limits<double>::infinity();
  Eigen::Index t = 0;
  int last_lag = 0;
  while (t + 1 < min_n) {
    const double rho_even = t == 0 ? 1.0 : autocorrelation(t);
    const double rho_odd = autocorrelation(t + 1);
    double pair = rho_even + rho_odd;
    if (!(pair > 0.0)) break;
    pair = std::min(pair, previous_pair);
    previous_pair = pair;
    sum_pairs += pair;
    last_lag = static_cast<int>(t + 1);
    t += 2;
  }
  double tau = -1.0 + 2.0 * sum_pairs;
  bool capped = false;
  const double tau_floor = 1.0 / kEssInflationBound;
  if (!(tau > tau_floor)) {
    tau = tau_floor;
    capped = true;
  }
  return {total / tau, last_lag, capped};
}

}  // namespace

std::vector<Matrix> rank_normalize(const std::vector<Matrix>& chains) {
  check_chains(chains, 1);
  const auto k = chains.front().cols();
  std::vector<Matrix> out = chains;
  for (Eigen::Index col = 0; col < k; ++col) {
    std::vector<std::pair<double, std::pair<std::size_t, Eigen::Index>>> pooled;
    for (std::size_t m = 0; m < chains.size(); ++m) {
      for (Eigen::Index i = 0; i < chains[m].rows(); ++i) {
        pooled.push_back({chains[m](i, col), {m, i}});
      }
    }
    std::stable_sort(pooled.begin(), pooled.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    const double s = static_cast<double>(pooled.size());
    std::size_t i = 0;
    while (i < pooled.size()) {
      std::size_t j = i;
      while (j + 1 < pooled.size() && pooled[j + 1].first == pooled[i].first) ++j;
      const double rank = 0.5 * static_cast<double>(i + j) + 1.0;  // average rank, 1-based
      const double z = standard_normal_quantile((rank - 0.375) / (s + 0.25));
      for (std::size_t r = i; r <= j; ++r) {
        out[pooled[r].second.first](pooled[r].second.second, col) = z;
      }
      i = j + 1;
    }
  }
  return out;
}

EssReport ess(const std::vector<Matrix>& chains, const EssOptions& options) {
  check_chains(chains, 8);
  const std::vector<Matrix> work = options.rank_normalized ? rank_normalize(chains) : chains;
  const auto k = work.front().cols();

  EssReport report;
  report.ess.resize(k);
  for (const auto& c : work) report.draws += c.rows();
  for (Eigen::Index col = 0; col < k; ++col) {
    std::vector<Vector> columns;
    columns.reserve(work.size());
    for (const auto& c : work) columns.emplace_back(c.col(col));
    const ScalarEss s = scalar_ess(columns, options.allow_degenerate);
    report.ess[col] = s.ess;
    report.truncation_lag.push_back(s.lag);
    report.capped.push_back(s.capped);
  }
  if (options.gradient_evals > 0) {
    report.ess_per_grad = report.ess / static_cast<double>(options.gradient_evals);
  }
  return report;
}

Vector rhat(const std::vector<Matrix>& chains) {
  if (chains.size() < 2) throw InsufficientDataError("rhat: need at least two chains");
  check_chains(chains, 4);
  const auto n = chains.front().rows();
  for (const auto& c : chains) {
    if (c.rows() != n) throw ContractError("rhat: chains must have equal lengths");
  }
  const auto half = n / 2;
  const auto k = chains.front().cols();
  Vector out(k);
  for (Eigen::Index col = 0; col < k; ++col) {
    std::vector<double> means, vars;
    for (const auto& c : chains) {
      for (const Eigen::Index start : {Eigen::Index{0}, n - half}) {
        const Vector seg = c.col(col).segment(start, half);
        const double mean = seg.mean();
        means.push_back(mean);
        vars.push_back((seg.array() - mean).square().sum() / static_cast<double>(half - 1));
      }
    }
    const double m = static_cast<double>(means.size());
    const double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
    double b = 0.0;
    for (const double mu : means) b += (mu - grand) * (mu - grand);
    b *= static_cast<double>(half) / (m - 1.0);
    const double w = std::accumulate(vars.begin(), vars.end(), 0.0) / m;
    const double h = static_cast<double>(half);
    const double var_plus = (h - 1.0) / h * w + b / h;
    if (w > 0.0) {
      out[col] = std::sqrt(var_plus / w);
    } else {
      out[col] = var_plus > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
    }
  }
  return out;
}

Vector column_correlation(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractError("correlation: shape mismatch");
  }
  if (a.rows() < 2) throw ContractError("correlation: need at least two rows");
  Vector out(a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    const auto ca = a.col(j).array() - a.col(j).mean();
    const auto cb = b.col(j).array() - b.col(j).mean();
    const double denom = std::sqrt(ca.square().sum() * cb.square().sum());
    out[j] = denom > 0.0 ? std::clamp((ca * cb).sum() / denom, -1.0, 1.0)
                         : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

Vector pooled_variance(const std::vector<Matrix>& chains) {
  check_chains(chains, 1);
  const auto k = chains.front().cols();
  Eigen::Index total = 0;
  Vector sum = Vector::Zero(k);
  for (const auto& c : chains) {
    sum += c.colwise().sum().transpose();
    total += c.rows();
  }
  if (total < 2) throw ContractError("pooled variance: need at least two draws");
  const Vector mean = sum / static_cast<double>(total);
  Vector ss = Vector::Zero(k);
  for (const auto& c : chains) {
    ss += (c.rowwise() - mean.transpose()).cwiseAbs2().colwise().sum().transpose();
  }
  return ss / static_cast<double>(total - 1);
}

std::optional<double> log_distance_slope(const std::vector<double>& distances, double floor) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int count = 0;
  for (std::size_t i = 0; i < distances.size(); ++i) {
    if (!(distances[i] > floor) || !std::isfinite(distances[i])) continue;
    const double x = static_cast<double>(i);
    const double y = std::log(distances[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++count;
  }
  if (count < 2) return std::nullopt;
  const double denom = count * sxx - sx * sx;
  if (!(denom > 0.0)) return std::nullopt;
  return (count * sxy - sx * sy) / denom;
}

CouplingStats coupling_stats(const CoupledTraces& traces, const FunctionOfState& f,
                             Eigen::Index burn_in, const TransportMap* map, Partner partner) {
  if (partner == Partner::automatic) {
    partner = traces.control ? Partner::control : Partner::antithetic;
  }
  const ChainTrace* other =
      partner == Partner::control ? (traces.control ? &*traces.control : nullptr)
                                  : (traces.antithetic ? &*traces.antithetic : nullptr);
  if (other == nullptr) throw ConfigError("coupling_stats: requested partner chain is missing");
  const ChainTrace& x = traces.primary;
  if (other->steps() != x.steps()) throw ContractError("coupling_stats: traces are not aligned");

  CouplingStats stats;
  const Matrix fx = f.evaluate_rows(x.post_burn_in(burn_in), map);
  const Matrix fy = f.evaluate_rows(other->post_burn_in(burn_in), map);
  stats.rho = column_correlation(fx, fy);
  stats.primary_acceptance = x.acceptance_rate(burn_in);
  stats.partner_acceptance = other->acceptance_rate(burn_in);

  long disagree = 0, joint_reject = 0;
  const auto n = x.steps();
  for (Eigen::Index i = burn_in; i < n; ++i) {
    const auto a = x.accepted[static_cast<std::size_t>(i)];
    const auto b = other->accepted[static_cast<std::size_t>(i)];
    disagree += a != b;
    joint_reject += (!a && !b);
  }
  stats.decoupling_rate = static_cast<double>(disagree) / static_cast<double>(n - burn_in);
  stats.joint_rejection_rate = static_cast<double>(joint_reject) / static_cast<double>(n - burn_in);

  std::vector<double> distance(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    distance[static_cast<std::size_t>(i)] =
        partner == Partner::control
            ? (x.samples.row(i) - other->samples.row(i)).norm()
            : (x.samples.row(i) + other->samples.row(i) - 2.0 * traces.center.transpose()).norm();
  }
  if (auto slope = log_distance_slope(distance)) stats.contraction_rate = std::exp(*slope);
  return stats;
}

double predict_vr_ess(double ess_hmc, double rho, VarianceReduction kind) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  switch (kind) {
    case VarianceReduction::none: return ess_hmc;
    case VarianceReduction::control:
      if (std::abs(rho) > 1.0) throw ContractError("predict_vr_ess: |rho| must be <= 1");
      if (std::abs(rho) == 1.0) return kInf;
      return ess_hmc / (1.0 - rho * rho);
    case VarianceReduction::antithetic:
      if (rho < -1.0 || rho > 1.0) throw ContractError("predict_vr_ess: rho must be in [-1, 1]");
      if (rho == -1.0) return kInf;
      return 2.0 * ess_hmc / (1.0 + rho);
  }
  throw ContractError("predict_vr_ess: unknown kind");
}

double ess_bound(double acceptance, BoundReading reading) {
  if (!(acceptance > 0.0 && acceptance < 1.0)) {
    throw ContractError("ess_bound: acceptance must lie in (0, 1)");
  }
  const double arg = 1.0 - acceptance / 2.0;
  const double inner =
      reading == BoundReading::inverse_cdf ? standard_normal_quantile(arg) : standard_normal_cdf(arg);
  return acceptance * std::sqrt(inner);
}

TuningCurve tuning_curve(const std::vector<PilotPoint>& pilots, VarianceReduction kind,
                         BoundReading reading, int grid_points) {
  if (pilots.size() < 3) throw ContractError("tuning_curve: need at least three pilot points");
  if (grid_points < 2) throw ContractError("tuning_curve: need at least two grid points");
  for (const auto& p : pilots) {
    if (!(p.acceptance > 0.0 && p.acceptance < 1.0)) {
      throw ContractError("tuning_curve: pilot acceptance must lie in (0, 1)");
    }
    if (!(p.rho >= -1.0 && p.rho <= 1.0)) {
      throw ContractError("tuning_curve: pilot rho must lie in [-1, 1]");
    }
  }
  // Average pilots sharing an acceptance value, then sort.
  std::vector<PilotPoint> sorted = pilots;
  std::sort(sorted.begin(), sorted.end(),
            [](const PilotPoint& a, const PilotPoint& b) { return a.acceptance < b.acceptance; });
  std::vector<PilotPoint> knots;
  std::vector<int> counts;
  for (const auto& p : sorted) {
    if (!knots.empty() && knots.back().acceptance == p.acceptance) {
      knots.back().rho += p.rho;
      ++counts.back();
    } else {
      knots.push_back(p);
      counts.push_back(1);
    }
  }
  for (std::size_t i = 0; i < knots.size(); ++i) knots[i].rho /= counts[i];
  if (knots.size() < 2) {
    throw ContractError("tuning_curve: pilots need at least two distinct acceptance values");
  }

  auto rho_at = [&](double a) {
    auto hi = std::upper_bound(knots.begin(), knots.end(), a,
                               [](double v, const PilotPoint& p) { return v < p.acceptance; });
    if (hi == knots.begin()) return knots.front().rho;
    if (hi == knots.end()) return knots.back().rho;
    const auto lo = hi - 1;
    const double t = (a - lo->acceptance) / (hi->acceptance - lo->acceptance);
    return lo->rho + t * (hi->rho - lo->rho);
  };

  TuningCurve curve;
  const double a0 = knots.front().acceptance;
  const double a1 = knots.back().acceptance;
  double best = -1.0;
  for (int i = 0; i < grid_points; ++i) {
    const double a = a0 + (a1 - a0) * i / (grid_points - 1);
    const double r = rho_at(a);
    const double value = predict_vr_ess(ess_bound(a, reading), r, kind);
    curve.acceptance.push_back(a);
    curve.rho.push_back(r);
    curve.predicted.push_back(value);
    if (value > best) {
      best = value;
      curve.recommended_acceptance = a;
    }
  }
  if (std::isfinite(best) && best > 0.0) {
    curve.normalizer = 1.0 / best;
    for (auto& v : curve.predicted) v *= curve.normalizer;
  }
  return curve;
}

}  // namespace swindle
