#include "dalign/processes/gaussian.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "dalign/core/error.hpp"

namespace dalign {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;

void check_state(const Eigen::VectorXd& x) {
  require(x.allFinite(), Errc::invalid_argument, "continuous state has non-finite coordinates");
}

}  // namespace

void GaussianMixtureData::validate() const {
  require(!components.empty(), Errc::invalid_argument, "mixture has no components");
  const int d = dim();
  require(d >= 1 && d <= kMaxDim, Errc::invalid_argument, "mixture dimension must be 1..8");
  double total = 0.0;
  for (const auto& c : components) {
    require(c.weight >= 0.0, Errc::invalid_argument, "negative mixture weight");
    require(c.mean.size() == d && c.var.size() == d, Errc::invalid_argument,
            "mixture components differ in dimension");
    require((c.var.array() >= 0.0).all(), Errc::invalid_argument, "negative mixture variance");
    total += c.weight;
  }
  require(std::abs(total - 1.0) <= 1e-9, Errc::invalid_argument, "mixture weights must sum to 1");
}

double GaussianMixtureData::log_density(const Eigen::VectorXd& x) const {
  double hi = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  for (const auto& c : components) {
    if (c.weight == 0.0) continue;
    require((c.var.array() > 0.0).all(), Errc::invalid_argument,
            "density undefined for point-mass components");
    const Eigen::ArrayXd z = (x - c.mean).array();
    const double lp = std::log(c.weight) -
                      0.5 * (kLog2Pi * x.size() + c.var.array().log().sum() +
                             (z * z / c.var.array()).sum());
    terms.push_back(lp);
    hi = std::max(hi, lp);
  }
  double s = 0.0;
  for (double v : terms) s += std::exp(v - hi);
  return hi + std::log(s);
}

GaussianMixtureData GaussianMixtureData::smoothed(double s2) const {
  GaussianMixtureData out = *this;
  for (auto& c : out.components) c.var.array() += s2;
  return out;
}

Eigen::VectorXd GaussianMixtureData::score(const Eigen::VectorXd& x) const {
  std::vector<double> lw;
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& c : components) {
    require((c.var.array() > 0.0).all(), Errc::invalid_argument,
            "score undefined for point-mass components");
    const Eigen::ArrayXd z = (x - c.mean).array();
    const double lp = (c.weight > 0.0 ? std::log(c.weight) : -INFINITY) -
                      0.5 * (c.var.array().log().sum() + (z * z / c.var.array()).sum());
    lw.push_back(lp);
    hi = std::max(hi, lp);
  }
  double total = 0.0;
  for (double& v : lw) total += (v = std::exp(v - hi));
  Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
  for (std::size_t k = 0; k < components.size(); ++k) {
    const auto& c = components[k];
    g.array() += (lw[k] / total) * (c.mean - x).array() / c.var.array();
  }
  return g;
}

ContinuousState gaussian_forward_sample(const ContinuousState& x0, int t,
                                        const NoiseSchedule& sched, Rng& rng) {
  require(t >= 0 && t <= sched.T, Errc::invalid_argument, "forward step index out of range");
  check_state(x0);
  const double ab = sched.alpha_bar[t];
  ContinuousState xt(x0.size());
  for (Eigen::Index i = 0; i < x0.size(); ++i)
    xt[i] = std::sqrt(ab) * x0[i] + std::sqrt(1.0 - ab) * standard_normal(rng);
  return xt;
}

BackwardMoments gaussian_backward_step(const ContinuousState& xt, const ContinuousState& x0hat,
                                       int t, const NoiseSchedule& sched) {
  require(t >= 1 && t <= sched.T, Errc::invalid_argument, "backward step index out of range");
  const double ab = sched.alpha_bar[t];
  const double ab_prev = sched.alpha_bar[t - 1];
  const double a = sched.alpha[t];
  require(ab < 1.0, Errc::degenerate_step, "alpha_bar_t = 1 makes the backward mean undefined");
  BackwardMoments m;
  m.mean = (std::sqrt(a) * (1.0 - ab_prev) * xt + std::sqrt(ab_prev) * (1.0 - a) * x0hat) /
           (1.0 - ab);
  m.var = sched.sigma2[t];
  return m;
}

ParamSet param_convert(Parameterization input, const ContinuousState& value,
                       const ContinuousState& xt, int t, const NoiseSchedule& sched) {
  require(t >= 0 && t <= sched.T, Errc::invalid_argument, "step index out of range");
  const double ab = sched.alpha_bar[t];
  require(ab > 0.0 && ab < 1.0, Errc::degenerate_step,
          "parameter conversion needs alpha_bar in (0, 1)");
  const double sa = std::sqrt(ab);
  const double sn = std::sqrt(1.0 - ab);
  ParamSet p;
  switch (input) {
    case Parameterization::x0:
      p.x0 = value;
      p.eps = (xt - sa * value) / sn;
      break;
    case Parameterization::eps:
      p.eps = value;
      p.x0 = (xt - sn * value) / sa;
      break;
    case Parameterization::score:
      p.eps = -sn * value;
      p.x0 = (xt + (1.0 - ab) * value) / sa;
      break;
  }
  p.score = input == Parameterization::score ? value : ContinuousState(-p.eps / sn);
  return p;
}

MixturePosterior mixture_posterior(const ContinuousState& xt, double ab,
                                   const GaussianMixtureData& data) {
  const std::size_t n = data.components.size();
  MixturePosterior post;
  post.resp.resize(n);
  post.mean.resize(n);
  post.var.resize(n);
  const double sa = std::sqrt(ab);
  double hi = -std::numeric_limits<double>::infinity();
  std::vector<double> logw(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& c = data.components[k];
    const Eigen::ArrayXd v = ab * c.var.array() + (1.0 - ab);
    const Eigen::ArrayXd z = xt.array() - sa * c.mean.array();
    if (c.weight == 0.0) {
      logw[k] = -std::numeric_limits<double>::infinity();
    } else if ((v > 0.0).all()) {
      logw[k] = std::log(c.weight) - 0.5 * (v.log().sum() + (z * z / v).sum());
    } else {
      // alpha_bar = 1 with a point mass: the component explains xt only if it
      // sits exactly on it.
      logw[k] = ((z == 0.0) || (v > 0.0)).all() ? std::log(c.weight) : -INFINITY;
    }
    hi = std::max(hi, logw[k]);
    Eigen::ArrayXd gain = Eigen::ArrayXd::Zero(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (v[i] > 0.0) gain[i] = sa * c.var[i] / v[i];
    post.mean[k] = c.mean.array() + gain * z;
    Eigen::ArrayXd pv = Eigen::ArrayXd::Zero(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (v[i] > 0.0) pv[i] = c.var[i] * (1.0 - ab) / v[i];
    post.var[k] = pv;
  }
  require(std::isfinite(hi), Errc::zero_support, "state has zero density under every component");
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) total += (post.resp[k] = std::exp(logw[k] - hi));
  for (double& r : post.resp) r /= total;
  return post;
}

DenoiserOutput exact_denoiser_continuous(const ContinuousState& xt, int t,
                                         const GaussianMixtureData& data,
                                         const NoiseSchedule& sched) {
  require(t >= 0 && t <= sched.T, Errc::invalid_argument, "step index out of range");
  check_state(xt);
  const double ab = sched.alpha_bar[t];
  DenoiserOutput out;
  if (ab >= 1.0) {
    // No noise: the state is its own clean value. The score falls back to the
    // data score where the density exists.
    out.x0hat = xt;
    bool smooth = true;
    for (const auto& c : data.components) smooth = smooth && (c.var.array() > 0.0).all();
    out.score = smooth ? data.score(xt) : ContinuousState(ContinuousState::Zero(xt.size()));
    return out;
  }
  // ab < 1 keeps every marginal variance positive, so the posterior is
  // computed coordinate-wise without the point-mass cases.
  const std::size_t n = data.components.size();
  const Eigen::Index d = xt.size();
  const double sa = std::sqrt(ab);
  thread_local std::vector<double> logw;
  logw.assign(n, 0.0);
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    const auto& c = data.components[k];
    if (c.weight == 0.0) {
      logw[k] = -std::numeric_limits<double>::infinity();
      continue;
    }
    double acc = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      const double v = ab * c.var[i] + (1.0 - ab);
      const double z = xt[i] - sa * c.mean[i];
      acc += std::log(v) + z * z / v;
    }
    logw[k] = std::log(c.weight) - 0.5 * acc;
    hi = std::max(hi, logw[k]);
  }
  require(std::isfinite(hi), Errc::zero_support, "state has zero density under every component");
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) total += (logw[k] = std::exp(logw[k] - hi));
  out.x0hat = ContinuousState::Zero(d);
  for (std::size_t k = 0; k < n; ++k) {
    if (logw[k] == 0.0) continue;
    const auto& c = data.components[k];
    const double w = logw[k] / total;
    for (Eigen::Index i = 0; i < d; ++i) {
      const double v = ab * c.var[i] + (1.0 - ab);
      out.x0hat[i] += w * (c.mean[i] + sa * c.var[i] / v * (xt[i] - sa * c.mean[i]));
    }
  }
  out.score = (std::sqrt(ab) * out.x0hat - xt) / (1.0 - ab);
  return out;
}

double gaussian_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, double var) {
  if (var <= 0.0)
    return x == mean ? 0.0 : -std::numeric_limits<double>::infinity();
  const double sq = (x - mean).squaredNorm();
  return -0.5 * (x.size() * (kLog2Pi + std::log(var)) + sq / var);
}

GaussianProcess::GaussianProcess(GaussianMixtureData data, NoiseSchedule sched)
    : data_(std::move(data)), sched_(std::move(sched)) {
  data_.validate();
}

GaussianProcess::State GaussianProcess::sample_initial(Rng& rng) const {
  State x(dim());
  for (int i = 0; i < dim(); ++i) x[i] = standard_normal(rng);
  return x;
}

double GaussianProcess::initial_logprob(const State& x) const {
  return gaussian_logpdf(x, State::Zero(dim()), 1.0);
}

DenoiserOutput GaussianProcess::denoise(const State& x, int t) const {
  return exact_denoiser_continuous(x, t, data_, sched_);
}

BackwardMoments GaussianProcess::step_moments(const State& x, int t) const {
  return gaussian_backward_step(x, denoise(x, t).x0hat, t, sched_);
}

GaussianProcess::State GaussianProcess::sample_step(const State& x, int t, Rng& rng) const {
  const auto m = step_moments(x, t);
  State next = m.mean;
  const double sd = std::sqrt(m.var);
  for (int i = 0; i < dim(); ++i) next[i] += sd * standard_normal(rng);
  return next;
}

double GaussianProcess::step_logprob(const State& next, const State& x, int t) const {
  const auto m = step_moments(x, t);
  return gaussian_logpdf(next, m.mean, m.var);
}

GaussianProcess::State GaussianProcess::forward_sample(const State& x0, int t, Rng& rng) const {
  return gaussian_forward_sample(x0, t, sched_, rng);
}

}  // namespace dalign
