#pragma once

#include <Eigen/Dense>
#include <vector>

#include "dalign/core/random.hpp"
#include "dalign/processes/schedule.hpp"

namespace dalign {

using ContinuousState = Eigen::VectorXd;

struct MixtureComponent {
  double weight = 1.0;
  Eigen::VectorXd mean;
  Eigen::VectorXd var;  // diagonal covariance; zero entries are point masses
};

/// Gaussian mixture data law with diagonal covariances.
struct GaussianMixtureData {
  std::vector<MixtureComponent> components;

  int dim() const { return components.empty() ? 0 : static_cast<int>(components[0].mean.size()); }
  void validate() const;
  double log_density(const Eigen::VectorXd& x) const;
  /// Same mixture convolved with N(0, s2 I).
  GaussianMixtureData smoothed(double s2) const;
  /// Score of the mixture density (requires positive variances).
  Eigen::VectorXd score(const Eigen::VectorXd& x) const;
};

inline constexpr int kMaxDim = 8;

ContinuousState gaussian_forward_sample(const ContinuousState& x0, int t,
                                        const NoiseSchedule& sched, Rng& rng);

struct BackwardMoments {
  ContinuousState mean;
  double var = 0.0;
};

BackwardMoments gaussian_backward_step(const ContinuousState& xt, const ContinuousState& x0hat,
                                       int t, const NoiseSchedule& sched);

enum class Parameterization { x0, eps, score };

struct ParamSet {
  ContinuousState x0;
  ContinuousState eps;
  ContinuousState score;
};

ParamSet param_convert(Parameterization input, const ContinuousState& value,
                       const ContinuousState& xt, int t, const NoiseSchedule& sched);

struct DenoiserOutput {
  ContinuousState x0hat;
  ContinuousState score;
};

/// Per-component conditional law of x0 given x_t under the mixture prior.
struct MixturePosterior {
  std::vector<double> resp;             // responsibilities, sum to 1
  std::vector<Eigen::VectorXd> mean;    // per-component posterior mean
  std::vector<Eigen::VectorXd> var;     // per-component posterior variance
};

MixturePosterior mixture_posterior(const ContinuousState& xt, double alpha_bar,
                                   const GaussianMixtureData& data);

DenoiserOutput exact_denoiser_continuous(const ContinuousState& xt, int t,
                                         const GaussianMixtureData& data,
                                         const NoiseSchedule& sched);

/// Variance-preserving Gaussian diffusion with the exact mixture denoiser.
class GaussianProcess {
 public:
  using State = ContinuousState;

  GaussianProcess(GaussianMixtureData data, NoiseSchedule sched);

  int dim() const { return data_.dim(); }
  int horizon() const { return sched_.T; }
  const NoiseSchedule& schedule() const { return sched_; }
  const GaussianMixtureData& data() const { return data_; }

  bool stochastic_initial() const { return true; }
  State sample_initial(Rng& rng) const;
  double initial_logprob(const State& x) const;

  DenoiserOutput denoise(const State& x, int t) const;
  BackwardMoments step_moments(const State& x, int t) const;
  State sample_step(const State& x, int t, Rng& rng) const;
  /// Gaussian log-density of the step; for zero-variance steps returns 0 on
  /// the Dirac atom and -inf elsewhere.
  double step_logprob(const State& next, const State& x, int t) const;
  State forward_sample(const State& x0, int t, Rng& rng) const;

 private:
  GaussianMixtureData data_;
  NoiseSchedule sched_;
};

double gaussian_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, double var);

}  // namespace dalign
