#include "dalign/geometry/so3.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dalign/core/error.hpp"

namespace dalign {
namespace {

constexpr double kSmallAngle = 1e-6;
constexpr double kBranchMargin = 1e-6;

}  // namespace

Eigen::Matrix3d hat(const TangentVector& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

TangentVector vee(const Eigen::Matrix3d& m) {
  const Eigen::Matrix3d s = 0.5 * (m - m.transpose());
  return TangentVector(s(2, 1), s(0, 2), s(1, 0));
}

RotationState so3_exp(const RotationState& x, const TangentVector& v) {
  const double theta = v.norm();
  const Eigen::Matrix3d k = hat(v);
  double a, b;  // coefficients of [v] and [v]^2
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    a = 1.0 - t2 / 6.0;
    b = 0.5 - t2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / (theta * theta);
  }
  return x * (Eigen::Matrix3d::Identity() + a * k + b * k * k);
}

TangentVector so3_log(const RotationState& x, const RotationState& y) {
  const Eigen::Matrix3d r = x.transpose() * y;
  const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  const double theta = std::acos(c);
  require(theta < std::numbers::pi - kBranchMargin, Errc::branch_cut,
          "relative rotation angle at the pi branch cut");
  const TangentVector w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  if (theta < kSmallAngle) return 0.5 * (1.0 + theta * theta / 6.0) * w;
  return theta / (2.0 * std::sin(theta)) * w;
}

TangentVector so3_riemannian_grad(const Eigen::Matrix3d& euclid_grad, const RotationState& x) {
  return vee(x.transpose() * euclid_grad);
}

TangentVector so3_tangent_noise(Rng& rng) {
  return TangentVector(standard_normal(rng), standard_normal(rng), standard_normal(rng));
}

double so3_inner(const TangentVector& a, const TangentVector& b) { return 2.0 * a.dot(b); }

RotationState so3_uniform(Rng& rng) {
  Eigen::Quaterniond q(standard_normal(rng), standard_normal(rng), standard_normal(rng),
                       standard_normal(rng));
  q.normalize();
  return q.toRotationMatrix();
}

double so3_manifold_error(const RotationState& r) {
  const double orth = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return std::max(orth, std::abs(r.determinant() - 1.0));
}

}  // namespace dalign
