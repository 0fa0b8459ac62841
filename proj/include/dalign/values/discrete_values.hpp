#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <ostream>
#include <unordered_map>
#include <vector>

#include "dalign/processes/masked.hpp"
#include "dalign/rewards/reward.hpp"
#include "dalign/values/value_model.hpp"

namespace dalign {

/// Exact soft values over every (t, state code) of a table-backed masked
/// process, by backward dynamic programming on the soft-Bellman recursion.
/// Masked states at t = 0 take the value of forcing every mask with the
/// denoiser marginals, which is what the next backward step would do.
class ExactDiscreteValues {
 public:
  ExactDiscreteValues(const MaskedProcess& model, const RewardModel& r, double alpha);

  double alpha() const { return alpha_; }
  /// NaN for states the data cannot produce.
  double value(int t, const DiscreteSequence& x) const;
  double value_code(int t, std::int64_t code) const { return v_[t][code]; }
  const std::vector<double>& layer(int t) const { return v_[t]; }

  DiscreteValueModel model() const;

 private:
  int K_, L_;
  double alpha_;
  std::vector<std::vector<double>> v_;
};

double exact_value_discrete(const MaskedProcess& model, const RewardModel& r, double alpha, int t,
                            const DiscreteSequence& x);

/// v_t computed the long way: propagate the conditional law of x_0 given
/// x_t = x forward through the kernels, then take alpha log E exp(r / alpha).
double direct_value_discrete(const MaskedProcess& model, const RewardModel& r, double alpha, int t,
                             const DiscreteSequence& x);

/// r(x0hat(x)); for sequences the reward's multilinear extension at the
/// denoiser marginals.
double posterior_mean_value(const MaskedProcess& model, const RewardModel& r, int t,
                            const DiscreteSequence& x);

DiscreteValueModel posterior_mean_model(const MaskedProcess& model, const RewardModel& r);

enum class FitSpace { exp_space, log_space };

/// Feature map for non-tabular regression: (t, state) -> feature vector.
using FeatureMap = std::function<Eigen::VectorXd(int, const DiscreteSequence&)>;

struct FitOptions {
  std::int64_t rollouts = 1000;
  int iterations = 1;  // soft Q-learning sweeps
  std::uint64_t seed = 0;
  int threads = 1;
  FitSpace space = FitSpace::exp_space;
  FeatureMap features;  // empty means tabular
};

/// Fitted values from pre-trained rollouts. Tabular cells are per-(t, code)
/// means; custom features use per-t least squares. Unseen cells fall back to
/// the posterior-mean value and are counted.
class FittedDiscreteValues {
 public:
  double alpha() const { return alpha_; }
  ValueKind kind() const { return kind_; }
  double value(int t, const DiscreteSequence& x) const;
  bool has_cell(int t, std::int64_t code) const;
  std::int64_t fallback_count() const { return fallbacks_->load(); }
  std::int64_t cell_count() const;

  /// Visited cells as "t,state,v" rows with a header line.
  void export_table(std::ostream& os) const;

  DiscreteValueModel model() const;

 private:
  friend FittedDiscreteValues mc_regression_fit(const MaskedProcess&, const RewardModel&, double,
                                                const FitOptions&);
  friend FittedDiscreteValues soft_q_fit(const MaskedProcess&, const RewardModel&, double,
                                         const FitOptions&);
  FittedDiscreteValues(const MaskedProcess& model, const RewardModel& r, double alpha,
                       ValueKind kind);

  const MaskedProcess* model_;
  const RewardModel* reward_;
  double alpha_;
  ValueKind kind_;
  std::vector<std::unordered_map<std::int64_t, double>> cells_;  // tabular values
  FeatureMap features_;
  std::vector<Eigen::VectorXd> coef_;   // per-t least-squares weights
  std::vector<double> shift_;           // per-t log shift of the regressand
  FitSpace space_ = FitSpace::exp_space;
  std::shared_ptr<std::atomic<std::int64_t>> fallbacks_;
};

/// Monte Carlo regression of exp(r(x0)/alpha) onto (t, x_t).
FittedDiscreteValues mc_regression_fit(const MaskedProcess& model, const RewardModel& r,
                                       double alpha, const FitOptions& opts);

/// Fitted soft-Q iteration: each sweep regresses exp(f_{j-1}(x_{t-1})/alpha)
/// onto x_t, starting from exp(r/alpha) at t = 0 and posterior-mean values
/// elsewhere.
FittedDiscreteValues soft_q_fit(const MaskedProcess& model, const RewardModel& r, double alpha,
                                const FitOptions& opts);

}  // namespace dalign
