#include "dalign/samplers/continuous_guidance.hpp"

#include <chrono>
#include <cmath>

namespace dalign {

TransitionKernel<ContinuousState> guided_gaussian_kernel(const GaussianProcess& process,
                                                         const ContinuousValueModel& values,
                                                         double alpha) {
  require(alpha > 0.0, Errc::invalid_argument, "classifier guidance needs alpha > 0");
  require(values.differentiable, Errc::unsupported_value_model,
          "classifier guidance needs a differentiable value model");
  const GaussianProcess* p = &process;
  auto moments = [p, values, alpha](const ContinuousState& x, int t) {
    auto m = p->step_moments(x, t);
    if (m.var > 0.0) m.mean += m.var * value_gradient(values, t, x) / alpha;
    return m;
  };
  TransitionKernel<ContinuousState> k;
  k.kind = KernelKind::guided;
  k.sample = [moments](const ContinuousState& x, int t, Rng& rng) {
    const auto m = moments(x, t);
    ContinuousState next = m.mean;
    const double sd = std::sqrt(m.var);
    for (Eigen::Index i = 0; i < next.size(); ++i) next[i] += sd * standard_normal(rng);
    return next;
  };
  k.logprob = [moments](const ContinuousState& next, const ContinuousState& x, int t) {
    const auto m = moments(x, t);
    return gaussian_logpdf(next, m.mean, m.var);
  };
  return k;
}

SamplerReport<ContinuousState> classifier_guidance_continuous(const GaussianProcess& process,
                                                              const ContinuousValueModel& values,
                                                              const RewardModel& r,
                                                              const GuidanceConfig& cfg) {
  validate(cfg, false);
  require(values.differentiable, Errc::unsupported_value_model,
          "classifier guidance needs a differentiable value model");
  const auto t0 = std::chrono::steady_clock::now();
  const int N = cfg.N;
  const int d = process.dim();
  const int T = process.horizon();
  const auto& sched = process.schedule();
  const std::size_t n = static_cast<std::size_t>(N) * d;
  std::vector<double> x(n), x0(n), g(n), noise(n), out(n);

  parallel_for(N, cfg.threads, [&](std::size_t i) {
    Rng rng = make_stream(cfg.seed, Stream::proposal, i, detail::step_key(T + 1), 0);
    const auto s = process.sample_initial(rng);
    for (int j = 0; j < d; ++j) x[i * d + j] = s[j];
  });
  for (int t = T; t >= 1; --t) {
    const double ab = sched.alpha_bar[t], ab_prev = sched.alpha_bar[t - 1], a = sched.alpha[t];
    require(ab < 1.0, Errc::degenerate_step, "alpha_bar_t = 1 at a backward step");
    const double cx = std::sqrt(a) * (1.0 - ab_prev) / (1.0 - ab);
    const double c0 = std::sqrt(ab_prev) * (1.0 - a) / (1.0 - ab);
    const double var = sched.sigma2[t];
    parallel_for(N, cfg.threads, [&](std::size_t i) {
      const Eigen::Map<const Eigen::VectorXd> xi(x.data() + i * d, d);
      const Eigen::VectorXd xv = xi;
      const auto den = process.denoise(xv, t);
      const Eigen::VectorXd grad =
          var > 0.0 ? value_gradient(values, t, xv) : Eigen::VectorXd::Zero(d);
      Rng rng = make_stream(cfg.seed, Stream::proposal, i, detail::step_key(t), 0);
      for (int j = 0; j < d; ++j) {
        x0[i * d + j] = den.x0hat[j];
        g[i * d + j] = grad[j];
        noise[i * d + j] = standard_normal(rng);
      }
    });
    kernels::affine_combine(out, cx, x, c0, x0, var / cfg.alpha, g, std::sqrt(var), noise);
    std::swap(x, out);
  }
  SamplerReport<ContinuousState> rep;
  rep.states.resize(N);
  for (int i = 0; i < N; ++i) rep.states[i] = Eigen::Map<const Eigen::VectorXd>(x.data() + i * d, d);
  rep.ess_trace.assign(T + 1, static_cast<double>(N));
  detail::finish_report(rep, r, t0);
  return rep;
}

Eigen::MatrixXd walk_jump(const ScoreFn& smoothed_score, const RewardModel& r, double alpha,
                          double beta, long steps, const Eigen::VectorXd& x_init, Rng& rng) {
  require(beta > 0.0, Errc::invalid_argument, "walk-jump step size must be > 0");
  require(alpha > 0.0, Errc::invalid_argument, "walk-jump needs alpha > 0");
  require(steps >= 0, Errc::invalid_argument, "negative step count");
  require(r.differentiable(), Errc::unsupported_value_model,
          "walk-jump needs a differentiable reward");
  const Eigen::Index d = x_init.size();
  Eigen::MatrixXd chain(steps + 1, d);
  Eigen::VectorXd y = x_init;
  chain.row(0) = y.transpose();
  const double noise_scale = std::sqrt(2.0 * beta);
  for (long s = 1; s <= steps; ++s) {
    const Eigen::VectorXd drift = r.grad(y) / alpha + smoothed_score(y);
    for (Eigen::Index j = 0; j < d; ++j)
      y[j] += beta * drift[j] + noise_scale * standard_normal(rng);
    chain.row(s) = y.transpose();
  }
  return chain;
}

TangentVector SO3Process::score(const RotationState& x) const {
  return so3_riemannian_grad(kappa * mean, x);
}

SO3GuidanceReport classifier_guidance_so3(const SO3Process& process, const RewardModel& r,
                                          const GuidanceConfig& cfg, bool guided) {
  require(cfg.N >= 1, Errc::invalid_argument, "N must be >= 1");
  require(cfg.alpha > 0.0, Errc::invalid_argument, "Riemannian guidance needs alpha > 0");
  require(process.T >= 1, Errc::invalid_argument, "SO(3) process needs T >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  const bool use_guidance = guided && std::isfinite(cfg.alpha);
  if (use_guidance)
    require(r.differentiable(), Errc::unsupported_value_model,
            "Riemannian guidance needs a differentiable reward");
  const int T = process.T;
  const double dt = process.dt();
  SO3GuidanceReport out;
  auto& rep = out.report;
  rep.states.resize(cfg.N);
  std::vector<double> err(cfg.N, 0.0);
  if (cfg.record_trajectories) rep.trajectories.resize(cfg.N);
  parallel_for(cfg.N, cfg.threads, [&](std::size_t i) {
    Rng init = make_stream(cfg.seed, Stream::proposal, i, detail::step_key(T + 1), 0);
    RotationState x = so3_uniform(init);
    err[i] = so3_manifold_error(x);
    if (cfg.record_trajectories) rep.trajectories[i].push_back(x);
    for (int t = T; t >= 1; --t) {
      Rng rng = make_stream(cfg.seed, Stream::proposal, i, detail::step_key(t), 0);
      TangentVector drift = process.score(x);
      // Posterior-mean value with the identity denoiser is r(x_t) itself.
      if (use_guidance) drift += so3_riemannian_grad(r.grad(x), x) / cfg.alpha;
      const TangentVector vel = dt * drift + std::sqrt(dt) * so3_tangent_noise(rng);
      x = so3_exp(x, vel);
      err[i] = std::max(err[i], so3_manifold_error(x));
      if (cfg.record_trajectories) rep.trajectories[i].push_back(x);
    }
    rep.states[i] = x;
  });
  for (double e : err) out.max_manifold_error = std::max(out.max_manifold_error, e);
  rep.ess_trace.assign(T + 1, static_cast<double>(cfg.N));
  detail::finish_report(rep, r, t0);
  return out;
}

}  // namespace dalign
