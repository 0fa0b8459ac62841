#pragma once

#include <Eigen/Dense>

#include "dalign/core/random.hpp"

namespace dalign {

using RotationState = Eigen::Matrix3d;
using TangentVector = Eigen::Vector3d;

Eigen::Matrix3d hat(const TangentVector& v);
/// Inverse of hat on the skew part of m.
TangentVector vee(const Eigen::Matrix3d& m);

/// x * exp([v]_x) via Rodrigues' formula; body-frame tangent vector.
RotationState so3_exp(const RotationState& x, const TangentVector& v);

/// Principal-branch logarithm of x^T y; throws branch-cut near angle pi.
TangentVector so3_log(const RotationState& x, const RotationState& y);

/// Body-frame Riemannian gradient: vee of the skew part of x^T G.
TangentVector so3_riemannian_grad(const Eigen::Matrix3d& euclid_grad, const RotationState& x);

/// Standard normal 3-vector used as body-frame tangent noise.
TangentVector so3_tangent_noise(Rng& rng);

/// Frobenius inner product of [a]_x and [b]_x (= 2 a.b).
double so3_inner(const TangentVector& a, const TangentVector& b);

/// Haar-uniform rotation from a normalized Gaussian quaternion.
RotationState so3_uniform(Rng& rng);

/// Max of |R^T R - I| and |det R - 1|.
double so3_manifold_error(const RotationState& r);

}  // namespace dalign
