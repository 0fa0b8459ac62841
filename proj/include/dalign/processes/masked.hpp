#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "dalign/core/random.hpp"
#include "dalign/processes/discrete.hpp"
#include "dalign/processes/schedule.hpp"

namespace dalign {

/// Per-position categorical rows, L x (K+1), last column MASK.
using StepRows = Eigen::MatrixXd;

/// Each clean token kept with probability alpha_bar_t, masked otherwise.
DiscreteSequence masked_forward_sample(const DiscreteSequence& x0, int t,
                                       const NoiseSchedule& sched, Rng& rng);

/// Backward kernel rows for one step t -> t-1 given per-position denoiser
/// probabilities (L x K).
StepRows masked_backward_step(const DiscreteSequence& xt, const Eigen::MatrixXd& x0hat_probs,
                              int t, const NoiseSchedule& sched);

/// Per-position marginals of p(x0 | unmasked tokens of xt), L x K.
Eigen::MatrixXd exact_denoiser_discrete(const DiscreteSequence& xt, const DistributionTable& data);

struct GeneratorEntry {
  int position = 0;
  int token = 0;
  double rate = 0.0;
};

/// Rate table over single-token changes from xt; diagonal = -sum(rates).
struct Generator {
  std::vector<GeneratorEntry> moves;
  double diagonal = 0.0;
};

/// Masked-diffusion generator: a masked position moves to token k at rate
/// (alpha_bar_{t-1} - alpha_bar_t) / ((1 - alpha_bar_t) dt) * x0hat[k], so
/// rate * dt is the one-step unmasking probability.
Generator discrete_generator(const DiscreteSequence& xt, int t,
                             const Eigen::MatrixXd& x0hat_probs, const NoiseSchedule& sched);

/// Pre-trained masked diffusion whose denoiser is the exact conditional
/// expectation under an explicit data table. Immutable after construction.
class MaskedProcess {
 public:
  using State = DiscreteSequence;

  MaskedProcess(DistributionTable data, NoiseSchedule sched);

  int K() const { return data_.K; }
  int L() const { return data_.L; }
  int horizon() const { return sched_.T; }
  const NoiseSchedule& schedule() const { return sched_; }
  const DistributionTable& data() const { return data_; }
  std::int64_t num_states() const { return num_states_; }

  bool stochastic_initial() const { return false; }
  State sample_initial(Rng&) const { return fully_masked(K(), L()); }
  double initial_logprob(const State&) const { return 0.0; }

  /// L x K denoiser probabilities (cached for small state spaces). States
  /// whose observed tokens the data never produces jointly get the
  /// unconditional marginals on their masked positions.
  Eigen::MatrixXd denoise(const State& x) const;
  Eigen::MatrixXd denoise_uncached(const State& x) const;

  StepRows step_rows(const State& x, int t) const;
  State sample_step(const State& x, int t, Rng& rng) const;
  double step_logprob(const State& next, const State& x, int t) const;
  State forward_sample(const State& x0, int t, Rng& rng) const;

  /// Calls fn(next_code, prob) for every next state with positive
  /// probability under the product kernel rows.
  static void for_each_successor(const State& x, const StepRows& rows,
                                 const std::function<void(std::int64_t, double)>& fn);

  /// Exact law of x0 obtained by running the backward process from the fully
  /// masked state (forward dynamic programming over state codes).
  DistributionTable terminal_law() const;

 private:
  DistributionTable data_;
  NoiseSchedule sched_;
  std::int64_t num_states_ = 0;
  std::vector<Eigen::MatrixXd> cache_;
};

}  // namespace dalign
