#pragma once

#include <Eigen/Dense>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "dalign/processes/discrete.hpp"
#include "dalign/processes/gaussian.hpp"
#include "dalign/rewards/reward.hpp"

namespace dalign {

/// Tilted law exp(r / alpha) p_pre / Z over an enumerable support.
struct OracleTarget {
  DistributionTable table;
  double logZ = 0.0;  // log sum exp(r / alpha) p_pre
  double alpha = 1.0;
};

OracleTarget brute_force_target(const DistributionTable& pre, const RewardModel& r, double alpha);

/// Discretized 1-D law on a uniform grid of cell centers.
struct GridTarget {
  std::vector<double> points;
  std::vector<double> prob;
  double logZ = 0.0;
  double alpha = 1.0;

  double mean() const;
  double variance() const;
};

/// Tilted 1-D mixture law on a grid (4096 cells by default) over [lo, hi].
GridTarget brute_force_target_grid(const GaussianMixtureData& pre, const RewardModel& r,
                                   double alpha, double lo, double hi, int cells = 4096);

/// (sum w)^2 / sum w^2 from log-weights.
double ess(std::span<const double> log_weights);

/// Half L1 distance between two laws on the same support.
double tv_distance(std::span<const double> p, std::span<const double> q);
double tv_distance(const DistributionTable& p, const DistributionTable& q);

/// KL(p || q); +inf when p puts mass where q has none.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Weighted empirical law of sequences over the K^L table index. Empty
/// log-weights mean uniform weights.
DistributionTable empirical_table(const std::vector<DiscreteSequence>& samples, int K, int L,
                                  std::span<const double> log_weights = {});

struct MetricsSummary {
  std::size_t count = 0;
  double mean_reward = 0.0;
  double max_reward = 0.0;
  double std_reward = 0.0;
  double diversity = 0.0;
  double duplicate_fraction = 0.0;
  std::optional<double> tv_to_oracle;
  std::optional<double> kl_to_oracle;
};

MetricsSummary report_metrics(const std::vector<DiscreteSequence>& samples, const RewardModel& r,
                              const OracleTarget* oracle = nullptr,
                              std::span<const double> log_weights = {});
MetricsSummary report_metrics(const std::vector<ContinuousState>& samples, const RewardModel& r,
                              std::span<const double> log_weights = {});

/// "state,prob" rows with header for an oracle table.
void export_oracle_csv(const OracleTarget& oracle, std::ostream& os);

}  // namespace dalign
