#include "dalign/oracle/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "dalign/core/error.hpp"
#include "dalign/kernels/kernels.hpp"

namespace dalign {

OracleTarget brute_force_target(const DistributionTable& pre, const RewardModel& r, double alpha) {
  require(alpha > 0.0, Errc::invalid_argument, "tilted target needs alpha > 0");
  require(pre.size() <= 1000000, Errc::invalid_argument, "support too large to enumerate");
  const auto rewards = r.table_values(pre.K, pre.L);
  std::vector<double> logw(pre.prob.size());
  for (std::size_t i = 0; i < logw.size(); ++i)
    logw[i] = pre.prob[i] > 0.0 ? std::log(pre.prob[i]) + rewards[i] / alpha
                                : -std::numeric_limits<double>::infinity();
  const double logZ = kernels::log_sum_exp(logw);
  std::vector<double> p(logw.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(logw[i] - logZ);
  OracleTarget out;
  out.table = DistributionTable::from_masses(pre.K, pre.L, std::move(p));
  out.logZ = logZ;
  out.alpha = alpha;
  return out;
}

double GridTarget::mean() const {
  double m = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) m += prob[i] * points[i];
  return m;
}

double GridTarget::variance() const {
  const double m = mean();
  double v = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) v += prob[i] * (points[i] - m) * (points[i] - m);
  return v;
}

GridTarget brute_force_target_grid(const GaussianMixtureData& pre, const RewardModel& r,
                                   double alpha, double lo, double hi, int cells) {
  require(alpha > 0.0, Errc::invalid_argument, "tilted target needs alpha > 0");
  require(pre.dim() == 1 && cells >= 2 && hi > lo, Errc::invalid_argument,
          "grid oracle supports 1-D mixtures on a non-empty interval");
  GridTarget g;
  g.alpha = alpha;
  g.points.resize(cells);
  std::vector<double> logw(cells);
  const double h = (hi - lo) / cells;
  Eigen::VectorXd x(1);
  for (int i = 0; i < cells; ++i) {
    x[0] = lo + (i + 0.5) * h;
    g.points[i] = x[0];
    logw[i] = pre.log_density(x) + r.eval(x) / alpha + std::log(h);
  }
  g.logZ = kernels::log_sum_exp(logw);
  g.prob.resize(cells);
  for (int i = 0; i < cells; ++i) g.prob[i] = std::exp(logw[i] - g.logZ);
  return g;
}

double ess(std::span<const double> log_weights) {
  const double hi = kernels::max_value(log_weights);
  require(log_weights.size() > 0 && hi > -std::numeric_limits<double>::infinity(),
          Errc::degenerate_weights, "all log-weights are -inf");
  const auto m = kernels::exp_moments(log_weights, hi);
  return m.sum * m.sum / m.sum_sq;
}

double tv_distance(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), Errc::invalid_argument, "distributions differ in support");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

double tv_distance(const DistributionTable& p, const DistributionTable& q) {
  require(p.K == q.K && p.L == q.L, Errc::invalid_argument, "distributions differ in support");
  return tv_distance(p.prob, q.prob);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), Errc::invalid_argument, "distributions differ in support");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
    s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

namespace {

std::vector<double> normalized_weights(std::size_t n, std::span<const double> log_weights) {
  std::vector<double> w(n, 1.0 / static_cast<double>(n));
  if (log_weights.empty()) return w;
  require(log_weights.size() == n, Errc::invalid_argument, "weight count mismatch");
  const double lse = kernels::log_sum_exp(log_weights);
  require(std::isfinite(lse), Errc::degenerate_weights, "all log-weights are -inf");
  for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(log_weights[i] - lse);
  return w;
}

template <class S, class Dist>
void fill_reward_stats(MetricsSummary& m, const std::vector<S>& samples, const RewardModel& r,
                       const std::vector<double>& w, Dist dist) {
  require(!samples.empty(), Errc::invalid_argument, "metrics need at least one sample");
  m.count = samples.size();
  m.max_reward = -std::numeric_limits<double>::infinity();
  std::vector<double> rewards(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    rewards[i] = r.eval(samples[i]);
    m.max_reward = std::max(m.max_reward, rewards[i]);
  }
  // Centering on the first reward keeps constant rewards exact.
  double wsum = 0.0, dev = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    wsum += w[i];
    dev += w[i] * (rewards[i] - rewards[0]);
  }
  m.mean_reward = rewards[0] + dev / wsum;
  double var = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    var += w[i] * (rewards[i] - m.mean_reward) * (rewards[i] - m.mean_reward);
  m.std_reward = std::sqrt(var);
  // Pairwise diversity on at most 2000 samples (deterministic prefix).
  const std::size_t n = std::min<std::size_t>(samples.size(), 2000);
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      total += dist(samples[i], samples[j]);
      ++pairs;
    }
  m.diversity = pairs ? total / static_cast<double>(pairs) : 0.0;
}

}  // namespace

DistributionTable empirical_table(const std::vector<DiscreteSequence>& samples, int K, int L,
                                  std::span<const double> log_weights) {
  const auto w = normalized_weights(samples.size(), log_weights);
  DistributionTable shape;
  shape.K = K;
  shape.L = L;
  std::int64_t n = 1;
  for (int l = 0; l < L; ++l) n *= K;
  std::vector<double> masses(n, 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i) masses[shape.index_of(samples[i])] += w[i];
  return DistributionTable::from_masses(K, L, std::move(masses));
}

MetricsSummary report_metrics(const std::vector<DiscreteSequence>& samples, const RewardModel& r,
                              const OracleTarget* oracle, std::span<const double> log_weights) {
  MetricsSummary m;
  const auto w = normalized_weights(samples.size(), log_weights);
  fill_reward_stats(m, samples, r, w, [](const DiscreteSequence& a, const DiscreteSequence& b) {
    return static_cast<double>(change_count(a, b)) / a.length();
  });
  std::set<std::vector<int>> distinct;
  for (const auto& s : samples) distinct.insert(s.tokens);
  m.duplicate_fraction =
      samples.size() > 1
          ? static_cast<double>(samples.size() - distinct.size()) / (samples.size() - 1)
          : 0.0;
  if (oracle) {
    const auto emp = empirical_table(samples, oracle->table.K, oracle->table.L, log_weights);
    m.tv_to_oracle = tv_distance(emp, oracle->table);
    m.kl_to_oracle = kl_divergence(emp.prob, oracle->table.prob);
  }
  return m;
}

MetricsSummary report_metrics(const std::vector<ContinuousState>& samples, const RewardModel& r,
                              std::span<const double> log_weights) {
  MetricsSummary m;
  const auto w = normalized_weights(samples.size(), log_weights);
  fill_reward_stats(m, samples, r, w, [](const ContinuousState& a, const ContinuousState& b) {
    return (a - b).norm();
  });
  std::size_t dup = 0;
  std::vector<std::vector<double>> keys;
  for (const auto& s : samples) keys.emplace_back(s.data(), s.data() + s.size());
  std::sort(keys.begin(), keys.end());
  for (std::size_t i = 1; i < keys.size(); ++i) dup += keys[i] == keys[i - 1];
  m.duplicate_fraction =
      samples.size() > 1 ? static_cast<double>(dup) / (samples.size() - 1) : 0.0;
  return m;
}

void export_oracle_csv(const OracleTarget& oracle, std::ostream& os) {
  os << "state,prob\n";
  const auto old = os.precision(17);
  for (std::int64_t i = 0; i < oracle.table.size(); ++i)
    os << oracle.table.sequence(i).str() << ',' << oracle.table.prob[i] << '\n';
  os.precision(old);
}

}  // namespace dalign
