#include "dalign/values/gaussian_values.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "dalign/core/error.hpp"

namespace dalign {

double closed_form_gaussian_value(const Eigen::VectorXd& m, const Eigen::VectorXd& s2,
                                  const Eigen::VectorXd& c, double alpha) {
  require(alpha > 0.0, Errc::invalid_argument, "soft values need alpha > 0");
  return c.dot(m) + (c.array().square() * s2.array()).sum() / (2.0 * alpha);
}

double closed_form_gaussian_value(double m, double s2, double c, double alpha) {
  require(alpha > 0.0, Errc::invalid_argument, "soft values need alpha > 0");
  return c * m + c * c * s2 / (2.0 * alpha);
}

namespace {

struct LinearValueParts {
  double value = 0.0;
  Eigen::VectorXd grad;
};

// v(x) = alpha log sum_k w_k(x) exp(h_k(x)) with w_k the posterior
// responsibilities and h_k the per-component Gaussian log-MGF / alpha.
LinearValueParts linear_value(const GaussianMixtureData& data, const Eigen::VectorXd& x,
                              double ab, const Eigen::VectorXd& c, double offset, double alpha) {
  const std::size_t n = data.components.size();
  const Eigen::Index d = x.size();
  const double sa = std::sqrt(ab);
  thread_local std::vector<double> logw, logwh;
  logw.assign(n, 0.0);
  logwh.assign(n, 0.0);
  double hi = -std::numeric_limits<double>::infinity(), hih = hi;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& comp = data.components[k];
    double logdet = 0.0, quad = 0.0, h = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      const double v = ab * comp.var[i] + (1.0 - ab);
      require(v > 0.0, Errc::degenerate_step,
              "closed-form value needs a noisy step or positive variances");
      const double z = x[i] - sa * comp.mean[i];
      const double gain = sa * comp.var[i] / v;
      const double pm = comp.mean[i] + gain * z;
      const double pv = comp.var[i] * (1.0 - ab) / v;
      logdet += std::log(v);
      quad += z * z / v;
      h += c[i] * pm / alpha + c[i] * c[i] * pv / (2.0 * alpha * alpha);
    }
    logw[k] = comp.weight > 0.0 ? std::log(comp.weight) - 0.5 * (logdet + quad)
                                : -std::numeric_limits<double>::infinity();
    logwh[k] = logw[k] + h;
    hi = std::max(hi, logw[k]);
    hih = std::max(hih, logwh[k]);
  }
  double sw = 0.0, swh = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    sw += std::exp(logw[k] - hi);
    swh += std::exp(logwh[k] - hih);
  }
  LinearValueParts out;
  out.value = alpha * ((hih + std::log(swh)) - (hi + std::log(sw))) + offset;
  // d logw_k / dx = -z / v and d h_k / dx = c gain / alpha, per coordinate
  out.grad = Eigen::VectorXd::Zero(d);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& comp = data.components[k];
    const double a = std::exp(logwh[k] - hih) / swh;
    const double b = std::exp(logw[k] - hi) / sw;
    for (Eigen::Index i = 0; i < d; ++i) {
      const double v = ab * comp.var[i] + (1.0 - ab);
      const double dlogw = -(x[i] - sa * comp.mean[i]) / v;
      const double dh = c[i] * sa * comp.var[i] / v / alpha;
      out.grad[i] += alpha * (a * (dlogw + dh) - b * dlogw);
    }
  }
  return out;
}

}  // namespace

ContinuousValueModel gaussian_linear_value_model(const GaussianProcess& model,
                                                 const Eigen::VectorXd& c, double offset,
                                                 double alpha) {
  require(alpha > 0.0, Errc::invalid_argument, "soft values need alpha > 0");
  require(c.size() == model.dim(), Errc::invalid_argument, "coefficient dimension mismatch");
  const GaussianProcess* pm = &model;
  ContinuousValueModel v;
  v.kind = ValueKind::closed_form;
  v.eval = [pm, c, offset, alpha](int t, const Eigen::VectorXd& x) {
    if (t == 0) return c.dot(x) + offset;
    return linear_value(pm->data(), x, pm->schedule().alpha_bar[t], c, offset, alpha).value;
  };
  v.gradient = [pm, c, offset, alpha](int t, const Eigen::VectorXd& x) -> Eigen::VectorXd {
    if (t == 0) return c;
    return linear_value(pm->data(), x, pm->schedule().alpha_bar[t], c, offset, alpha).grad;
  };
  return v;
}

ContinuousValueModel posterior_mean_model(const GaussianProcess& model, const RewardModel& r) {
  const GaussianProcess* pm = &model;
  const RewardModel* pr = &r;
  ContinuousValueModel v;
  v.kind = ValueKind::posterior_mean;
  v.eval = [pm, pr](int t, const Eigen::VectorXd& x) { return pr->eval(pm->denoise(x, t).x0hat); };
  v.differentiable = r.differentiable();
  return v;
}

}  // namespace dalign
