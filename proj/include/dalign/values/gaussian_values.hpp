#pragma once

#include <Eigen/Dense>

#include "dalign/processes/gaussian.hpp"
#include "dalign/rewards/reward.hpp"
#include "dalign/values/value_model.hpp"

namespace dalign {

/// alpha log E exp(c.x0 / alpha) for x0 ~ N(m, diag(s2)): c.m + sum c^2 s2 / (2 alpha).
double closed_form_gaussian_value(const Eigen::VectorXd& m, const Eigen::VectorXd& s2,
                                  const Eigen::VectorXd& c, double alpha);
double closed_form_gaussian_value(double m, double s2, double c, double alpha);

/// Exact soft value of a linear reward c.x + b under the mixture posterior
/// of x0 given x_t, with its analytic gradient in x_t.
ContinuousValueModel gaussian_linear_value_model(const GaussianProcess& model,
                                                 const Eigen::VectorXd& c, double offset,
                                                 double alpha);

/// r(x0hat(x_t)); gradients by central finite differences.
ContinuousValueModel posterior_mean_model(const GaussianProcess& model, const RewardModel& r);

}  // namespace dalign
