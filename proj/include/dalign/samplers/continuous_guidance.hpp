#pragma once

#include <Eigen/Dense>
#include <functional>

#include "dalign/geometry/so3.hpp"
#include "dalign/processes/gaussian.hpp"
#include "dalign/samplers/guidance.hpp"

namespace dalign {

/// Backward Gaussian step with mean shifted by sigma_t^2 grad v_{t} / alpha.
TransitionKernel<ContinuousState> guided_gaussian_kernel(const GaussianProcess& process,
                                                         const ContinuousValueModel& values,
                                                         double alpha);

/// Batched classifier guidance: every step samples
/// N(mean_pre(x_t) + sigma_t^2 grad v_t(x_t) / alpha, sigma_t^2).
SamplerReport<ContinuousState> classifier_guidance_continuous(const GaussianProcess& process,
                                                              const ContinuousValueModel& values,
                                                              const RewardModel& r,
                                                              const GuidanceConfig& cfg);

using ScoreFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Unadjusted Langevin chain y <- y + beta (grad r / alpha + score(y)) +
/// sqrt(2 beta) eps. Row s of the result is the state after s steps.
Eigen::MatrixXd walk_jump(const ScoreFn& smoothed_score, const RewardModel& r, double alpha,
                          double beta, long steps, const Eigen::VectorXd& x_init, Rng& rng);

/// Pre-trained Riemannian process on SO(3): starts Haar-uniform and takes
/// geodesic steps exp_x(dt * s(x) + sqrt(dt) eps) with s the Riemannian
/// gradient of kappa Tr(mean^T x). Its denoiser is the identity map.
struct SO3Process {
  double kappa = 1.0;
  Eigen::Matrix3d mean = Eigen::Matrix3d::Identity();
  int T = 100;

  double dt() const { return 1.0 / T; }
  TangentVector score(const RotationState& x) const;
};

struct SO3GuidanceReport {
  SamplerReport<RotationState> report;
  double max_manifold_error = 0.0;  // over every iterate of every particle
};

/// Riemannian classifier guidance: vel = dt (score + grad^g v / alpha) +
/// sqrt(dt) eps with the posterior-mean value v = r(x_t). alpha = +inf (or
/// guided = false) gives unguided sampling on the same random streams.
SO3GuidanceReport classifier_guidance_so3(const SO3Process& process, const RewardModel& r,
                                          const GuidanceConfig& cfg, bool guided = true);

}  // namespace dalign
