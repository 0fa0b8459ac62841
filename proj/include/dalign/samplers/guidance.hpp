#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dalign/core/error.hpp"
#include "dalign/core/parallel.hpp"
#include "dalign/core/random.hpp"
#include "dalign/kernels/kernels.hpp"
#include "dalign/oracle/metrics.hpp"
#include "dalign/rewards/reward.hpp"
#include "dalign/values/value_model.hpp"

namespace dalign {

enum class ProposalKind { pretrained, classifier_guided, custom };
enum class Resampling { multinomial, systematic };
enum class KernelKind { pretrained, proposal, guided };

struct GuidanceConfig {
  double alpha = 1.0;       // 0 means the argmax limit (svdd / beam search only)
  int N = 1;                // particles
  int M = 1;                // candidates per particle
  double ess_threshold = 0.5;
  ProposalKind proposal = ProposalKind::pretrained;
  std::uint64_t seed = 0;
  Resampling resampling = Resampling::multinomial;
  int threads = 1;
  bool record_trajectories = false;
};

void validate(const GuidanceConfig& cfg, bool allow_zero_alpha);

/// x_{t-1} ~ kernel(. | x_t) with evaluable log-probability.
template <class S>
struct TransitionKernel {
  KernelKind kind = KernelKind::pretrained;
  std::function<S(const S&, int, Rng&)> sample;
  std::function<double(const S&, const S&, int)> logprob;  // (next, prev, t)
};

/// Structural requirements shared by the masked and Gaussian processes.
template <class P>
concept DiffusionProcess = requires(const P& p, const typename P::State& x, Rng& rng, int t) {
  { p.horizon() } -> std::convertible_to<int>;
  { p.stochastic_initial() } -> std::convertible_to<bool>;
  { p.sample_initial(rng) } -> std::convertible_to<typename P::State>;
  { p.sample_step(x, t, rng) } -> std::convertible_to<typename P::State>;
  { p.step_logprob(x, x, t) } -> std::convertible_to<double>;
};

template <DiffusionProcess P>
TransitionKernel<typename P::State> pretrained_kernel(const P& process) {
  TransitionKernel<typename P::State> k;
  k.kind = KernelKind::pretrained;
  const P* p = &process;
  k.sample = [p](const typename P::State& x, int t, Rng& rng) { return p->sample_step(x, t, rng); };
  k.logprob = [p](const typename P::State& next, const typename P::State& x, int t) {
    return p->step_logprob(next, x, t);
  };
  return k;
}

/// Optional deterministic starting point (state at step t) instead of the
/// process prior; used by refinement.
template <class S>
struct SamplerStart {
  S state;
  int t = 0;
};

template <class S>
struct SamplerReport {
  std::vector<S> states;
  std::vector<double> log_weights;    // final weights (uniform unless weighted output)
  std::vector<double> ess_trace;      // entry k is the ESS at step t = T - k
  std::vector<int> resample_steps;    // steps t after which resampling happened
  std::vector<double> rewards;
  double mean_reward = 0.0;           // weighted by log_weights
  double max_reward = 0.0;
  double log_normalizer = std::numeric_limits<double>::quiet_NaN();
  double candidate_rejection_rate = 0.0;
  double wall_clock = 0.0;
  std::vector<std::vector<S>> trajectories;  // [particle][T - t]
};

namespace detail {

inline constexpr std::uint64_t kInitialStep = std::numeric_limits<std::uint32_t>::max();

/// Index for the stream of step t; the stochastic initial draw uses T+1.
inline std::uint64_t step_key(int t) { return static_cast<std::uint64_t>(t); }

template <class S>
void finish_report(SamplerReport<S>& rep, const RewardModel& r,
                   std::chrono::steady_clock::time_point start) {
  const std::size_t n = rep.states.size();
  rep.rewards.resize(n);
  for (std::size_t i = 0; i < n; ++i) rep.rewards[i] = r.eval(rep.states[i]);
  if (rep.log_weights.empty()) rep.log_weights.assign(n, 0.0);
  const double lse = kernels::log_sum_exp(rep.log_weights);
  rep.mean_reward = 0.0;
  rep.max_reward = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    rep.mean_reward += std::exp(rep.log_weights[i] - lse) * rep.rewards[i];
    rep.max_reward = std::max(rep.max_reward, rep.rewards[i]);
  }
  rep.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

/// Ancestor indices drawn proportional to exp(log_weights).
std::vector<int> resample_indices(std::span<const double> log_weights, Resampling scheme, Rng& rng);

/// Index of the largest value, lowest index on ties.
int argmax_lowest(std::span<const double> values);

/// log p_pre(next|x) - log q(next|x); zero when q is the pre-trained kernel.
template <class S>
double proposal_correction(const TransitionKernel<S>& q, const TransitionKernel<S>& pre,
                           const S& next, const S& x, int t) {
  if (q.kind == KernelKind::pretrained) return 0.0;
  const double lp = pre.logprob(next, x, t);
  const double lq = q.logprob(next, x, t);
  if (lp == lq) return 0.0;  // covers matching Dirac atoms
  return lp - lq;
}

}  // namespace detail

/// Plain ancestral sampling with the given kernel (the reference that
/// SVDD with M = 1 must reproduce bit for bit).
template <DiffusionProcess P>
SamplerReport<typename P::State> sample_with_kernel(
    const P& process, const TransitionKernel<typename P::State>& kernel, const RewardModel& r,
    const GuidanceConfig& cfg, const std::optional<SamplerStart<typename P::State>>& start = {}) {
  using S = typename P::State;
  const auto t0 = std::chrono::steady_clock::now();
  require(cfg.N >= 1, Errc::invalid_argument, "N must be >= 1");
  const int T = start ? start->t : process.horizon();
  SamplerReport<S> rep;
  rep.states.resize(cfg.N);
  if (cfg.record_trajectories) rep.trajectories.resize(cfg.N);
  parallel_for(cfg.N, cfg.threads, [&](std::size_t i) {
    S x;
    if (start) {
      x = start->state;
    } else {
      Rng rng = make_stream(cfg.seed, Stream::proposal, i, detail::step_key(T + 1), 0);
      x = process.sample_initial(rng);
    }
    if (cfg.record_trajectories) rep.trajectories[i].push_back(x);
    for (int t = T; t >= 1; --t) {
      Rng rng = make_stream(cfg.seed, Stream::proposal, i, detail::step_key(t), 0);
      x = kernel.sample(x, t, rng);
      if (cfg.record_trajectories) rep.trajectories[i].push_back(x);
    }
    rep.states[i] = std::move(x);
  });
  rep.ess_trace.assign(T + 1, static_cast<double>(cfg.N));
  detail::finish_report(rep, r, t0);
  return rep;
}

template <DiffusionProcess P>
SamplerReport<typename P::State> sample_pretrained(const P& process, const RewardModel& r,
                                                   const GuidanceConfig& cfg) {
  return sample_with_kernel(process, pretrained_kernel(process), r, cfg);
}

/// N unguided samples; returns the reward-argmax (lowest index on ties).
template <class S>
struct BestOfN {
  S best;
  int best_index = 0;
  std::vector<double> rewards;
};

template <DiffusionProcess P>
BestOfN<typename P::State> best_of_n(const P& process, const RewardModel& r, int N,
                                     std::uint64_t seed, int threads = 1) {
  GuidanceConfig cfg;
  cfg.N = N;
  cfg.seed = seed;
  cfg.threads = threads;
  auto rep = sample_pretrained(process, r, cfg);
  BestOfN<typename P::State> out;
  out.rewards = rep.rewards;
  out.best_index = detail::argmax_lowest(rep.rewards);
  out.best = rep.states[out.best_index];
  return out;
}

/// Sequential Monte Carlo guidance with value twisting and ESS-triggered
/// multinomial or systematic resampling. Output keeps the final weights.
template <DiffusionProcess P>
SamplerReport<typename P::State> smc_guidance(
    const P& process, const ValueModel<typename P::State>& values, const RewardModel& r,
    const GuidanceConfig& cfg, const TransitionKernel<typename P::State>* proposal = nullptr,
    const std::optional<SamplerStart<typename P::State>>& start = {}) {
  using S = typename P::State;
  validate(cfg, false);
  const auto t0 = std::chrono::steady_clock::now();
  const auto pre = pretrained_kernel(process);
  const auto& q = proposal ? *proposal : pre;
  const double a = cfg.alpha;
  const int N = cfg.N;
  const int T = start ? start->t : process.horizon();

  SamplerReport<S> rep;
  std::vector<S> x(N);
  std::vector<double> cur_v(N), logw(N, 0.0), incr(N);
  if (cfg.record_trajectories) rep.trajectories.resize(N);
  double logZ = 0.0;

  auto maybe_resample = [&](int t) {
    const double e = ess(logw);
    rep.ess_trace.push_back(e);
    if (t > 0 && e < cfg.ess_threshold * N) {
      Rng rng = make_stream(cfg.seed, Stream::resample, detail::step_key(t));
      const auto anc = detail::resample_indices(logw, cfg.resampling, rng);
      std::vector<S> nx(N);
      std::vector<double> nv(N);
      std::vector<std::vector<S>> ntraj;
      if (cfg.record_trajectories) ntraj.resize(N);
      for (int i = 0; i < N; ++i) {
        nx[i] = x[anc[i]];
        nv[i] = cur_v[anc[i]];
        if (cfg.record_trajectories) ntraj[i] = rep.trajectories[anc[i]];
      }
      x = std::move(nx);
      cur_v = std::move(nv);
      if (cfg.record_trajectories) rep.trajectories = std::move(ntraj);
      std::fill(logw.begin(), logw.end(), 0.0);
      rep.resample_steps.push_back(t);
    }
  };

  const bool weighted_init = !start && process.stochastic_initial();
  parallel_for(N, cfg.threads, [&](std::size_t i) {
    if (start) {
      x[i] = start->state;
    } else {
      Rng rng = make_stream(cfg.seed, Stream::proposal, i, detail::step_key(T + 1), 0);
      x[i] = process.sample_initial(rng);
    }
    cur_v[i] = values(T, x[i]);
    if (cfg.record_trajectories) rep.trajectories[i].push_back(x[i]);
  });
  if (weighted_init) {
    for (int i = 0; i < N; ++i) logw[i] = cur_v[i] / a;
    logZ = kernels::log_sum_exp(logw) - std::log(static_cast<double>(N));
  } else {
    logZ = cur_v[0] / a;
  }
  maybe_resample(T);

  for (int t = T; t >= 1; --t) {
    parallel_for(N, cfg.threads, [&](std::size_t i) {
      Rng rng = make_stream(cfg.seed, Stream::proposal, i, detail::step_key(t), 0);
      S next = q.sample(x[i], t, rng);
      const double v = values(t - 1, next);
      incr[i] = (v - cur_v[i]) / a + detail::proposal_correction(q, pre, next, x[i], t);
      cur_v[i] = v;
      x[i] = std::move(next);
      if (cfg.record_trajectories) rep.trajectories[i].push_back(x[i]);
    });
    const double before = kernels::log_sum_exp(logw);
    for (int i = 0; i < N; ++i) logw[i] += incr[i];
    const double after = kernels::log_sum_exp(logw);
    require(std::isfinite(after), Errc::degenerate_weights, "all particle weights vanished");
    logZ += after - before;
    maybe_resample(t - 1);
  }
  rep.states = std::move(x);
  rep.log_weights = std::move(logw);
  rep.log_normalizer = logZ;
  detail::finish_report(rep, r, t0);
  return rep;
}

namespace detail {

/// Per-particle M-candidate step shared by SVDD, beam search and nested SMC.
/// Returns the chosen candidate and writes the log of the mean local weight.
template <class S, class P>
struct CandidateStep {
  const P& process;
  const ValueModel<S>& values;
  const TransitionKernel<S>& q;
  const TransitionKernel<S>& pre;
  const GuidanceConfig& cfg;
  bool argmax;  // alpha = 0 / beam search

  struct Result {
    S state;
    double value = 0.0;
    double log_mean_weight = 0.0;
    double local_ess = 1.0;
  };

  // t is the step being taken (x at t -> candidates at t-1); t = T+1 draws
  // from the initial law and the "current value" term is dropped.
  Result operator()(std::size_t i, const S* x, double cur_v, int t, bool initial) const {
    const int M = cfg.M;
    std::vector<S> cand(M);
    std::vector<double> v(M), lw(M);
    for (int j = 0; j < M; ++j) {
      Rng rng = make_stream(cfg.seed, Stream::proposal, i, step_key(t), j);
      cand[j] = initial ? process.sample_initial(rng) : q.sample(*x, t, rng);
      v[j] = values(t - 1, cand[j]);
      if (!argmax)
        lw[j] = (v[j] - cur_v) / cfg.alpha +
                (initial ? 0.0 : proposal_correction(q, pre, cand[j], *x, t));
    }
    Result res;
    int pick = 0;
    if (argmax) {
      pick = argmax_lowest(v);
      res.local_ess = 1.0;
    } else {
      res.log_mean_weight = kernels::log_sum_exp(lw) - std::log(static_cast<double>(M));
      require(std::isfinite(res.log_mean_weight), Errc::degenerate_weights,
              "all candidate weights vanished");
      res.local_ess = ess(lw);
      if (M > 1) {
        Rng rng = make_stream(cfg.seed, Stream::select, i, step_key(t));
        pick = static_cast<int>(sample_log_categorical(lw, rng));
      }
    }
    res.state = std::move(cand[pick]);
    res.value = v[pick];
    return res;
  }
};

template <DiffusionProcess P>
SamplerReport<typename P::State> local_search(
    const P& process, const ValueModel<typename P::State>& values, const RewardModel& r,
    const GuidanceConfig& cfg, const TransitionKernel<typename P::State>* proposal,
    const std::optional<SamplerStart<typename P::State>>& start, bool argmax) {
  using S = typename P::State;
  const auto t0 = std::chrono::steady_clock::now();
  const auto pre = pretrained_kernel(process);
  const auto& q = proposal ? *proposal : pre;
  const int N = cfg.N;
  const int T = start ? start->t : process.horizon();
  CandidateStep<S, P> step{process, values, q, pre, cfg, argmax};

  SamplerReport<S> rep;
  rep.states.resize(N);
  if (cfg.record_trajectories) rep.trajectories.resize(N);
  std::vector<double> rejection(N, 0.0);
  std::vector<int> steps_taken(N, 0);
  parallel_for(N, cfg.threads, [&](std::size_t i) {
    S x;
    double cur_v = 0.0;
    if (start) {
      x = start->state;
      cur_v = argmax ? 0.0 : values(T, x);
    } else if (process.stochastic_initial()) {
      auto res = step(i, nullptr, 0.0, T + 1, true);
      x = std::move(res.state);
      cur_v = res.value;
      rejection[i] += 1.0 - res.local_ess / cfg.M;
      ++steps_taken[i];
    } else {
      Rng rng = make_stream(cfg.seed, Stream::proposal, i, step_key(T + 1), 0);
      x = process.sample_initial(rng);
      cur_v = argmax ? 0.0 : values(T, x);
    }
    if (cfg.record_trajectories) rep.trajectories[i].push_back(x);
    for (int t = T; t >= 1; --t) {
      auto res = step(i, &x, cur_v, t, false);
      x = std::move(res.state);
      cur_v = res.value;
      rejection[i] += 1.0 - res.local_ess / cfg.M;
      ++steps_taken[i];
      if (cfg.record_trajectories) rep.trajectories[i].push_back(x);
    }
    rep.states[i] = std::move(x);
  });
  double rej = 0.0, cnt = 0.0;
  for (int i = 0; i < N; ++i) {
    rej += rejection[i];
    cnt += steps_taken[i];
  }
  rep.candidate_rejection_rate = cnt > 0 ? rej / cnt : 0.0;
  rep.ess_trace.assign(T + 1, static_cast<double>(N));
  detail::finish_report(rep, r, t0);
  return rep;
}

}  // namespace detail

/// Value-based importance sampling: per particle, M candidates weighted by
/// exp(v_{t-1}/alpha) p_pre/q, one selected; alpha = 0 selects the argmax.
template <DiffusionProcess P>
SamplerReport<typename P::State> svdd(
    const P& process, const ValueModel<typename P::State>& values, const RewardModel& r,
    const GuidanceConfig& cfg, const TransitionKernel<typename P::State>* proposal = nullptr,
    const std::optional<SamplerStart<typename P::State>>& start = {}) {
  validate(cfg, true);
  return detail::local_search(process, values, r, cfg, proposal, start, cfg.alpha == 0.0);
}

/// Keeps the value-argmax of M proposal children per particle.
template <DiffusionProcess P>
SamplerReport<typename P::State> beam_search(
    const P& process, const ValueModel<typename P::State>& values, const RewardModel& r,
    const GuidanceConfig& cfg, const TransitionKernel<typename P::State>* proposal = nullptr,
    const std::optional<SamplerStart<typename P::State>>& start = {}) {
  validate(cfg, true);
  return detail::local_search(process, values, r, cfg, proposal, start, true);
}

/// Local M-candidate selection plus global N-way resampling on the batch
/// of mean local weights every step. log_normalizer estimates
/// log E_pre[exp(r(x0)/alpha)].
template <DiffusionProcess P>
SamplerReport<typename P::State> nested_smc(
    const P& process, const ValueModel<typename P::State>& values, const RewardModel& r,
    const GuidanceConfig& cfg, const TransitionKernel<typename P::State>* proposal = nullptr,
    const std::optional<SamplerStart<typename P::State>>& start = {}) {
  using S = typename P::State;
  validate(cfg, false);
  const auto t0 = std::chrono::steady_clock::now();
  const auto pre = pretrained_kernel(process);
  const auto& q = proposal ? *proposal : pre;
  const int N = cfg.N;
  const int T = start ? start->t : process.horizon();
  detail::CandidateStep<S, P> step{process, values, q, pre, cfg, false};

  SamplerReport<S> rep;
  std::vector<S> x(N);
  std::vector<double> cur_v(N), W(N), rejection(N, 0.0);
  if (cfg.record_trajectories) rep.trajectories.resize(N);
  double logZ = 0.0;
  double rej_total = 0.0;
  int rej_steps = 0;

  auto global_resample = [&](int key, int t_after) {
    rep.ess_trace.push_back(ess(W));
    const double lse = kernels::log_sum_exp(W);
    require(std::isfinite(lse), Errc::degenerate_weights, "all global weights vanished");
    logZ += lse - std::log(static_cast<double>(N));
    Rng rng = make_stream(cfg.seed, Stream::resample, detail::step_key(key));
    const auto anc = detail::resample_indices(W, cfg.resampling, rng);
    std::vector<S> nx(N);
    std::vector<double> nv(N);
    std::vector<std::vector<S>> ntraj;
    if (cfg.record_trajectories) ntraj.resize(N);
    for (int i = 0; i < N; ++i) {
      nx[i] = x[anc[i]];
      nv[i] = cur_v[anc[i]];
      if (cfg.record_trajectories) ntraj[i] = rep.trajectories[anc[i]];
    }
    x = std::move(nx);
    cur_v = std::move(nv);
    if (cfg.record_trajectories) rep.trajectories = std::move(ntraj);
    rep.resample_steps.push_back(t_after);
    for (int i = 0; i < N; ++i) rej_total += rejection[i];
    rej_steps += N;
  };

  if (!start && process.stochastic_initial()) {
    parallel_for(N, cfg.threads, [&](std::size_t i) {
      auto res = step(i, nullptr, 0.0, T + 1, true);
      x[i] = std::move(res.state);
      cur_v[i] = res.value;
      W[i] = res.log_mean_weight;
      rejection[i] = 1.0 - res.local_ess / cfg.M;
      if (cfg.record_trajectories) rep.trajectories[i].push_back(x[i]);
    });
    global_resample(T + 1, T);
  } else {
    parallel_for(N, cfg.threads, [&](std::size_t i) {
      if (start) {
        x[i] = start->state;
      } else {
        Rng rng = make_stream(cfg.seed, Stream::proposal, i, detail::step_key(T + 1), 0);
        x[i] = process.sample_initial(rng);
      }
      cur_v[i] = values(T, x[i]);
      if (cfg.record_trajectories) rep.trajectories[i].push_back(x[i]);
    });
    logZ = cur_v[0] / cfg.alpha;
    rep.ess_trace.push_back(static_cast<double>(N));
  }

  for (int t = T; t >= 1; --t) {
    parallel_for(N, cfg.threads, [&](std::size_t i) {
      auto res = step(i, &x[i], cur_v[i], t, false);
      x[i] = std::move(res.state);
      cur_v[i] = res.value;
      W[i] = res.log_mean_weight;
      rejection[i] = 1.0 - res.local_ess / cfg.M;
      if (cfg.record_trajectories) rep.trajectories[i].push_back(x[i]);
    });
    global_resample(t, t - 1);
  }
  rep.states = std::move(x);
  rep.log_normalizer = logZ;
  rep.candidate_rejection_rate = rej_steps ? rej_total / rej_steps : 0.0;
  detail::finish_report(rep, r, t0);
  return rep;
}

/// Weighted empirical x0 law of a report.
template <class S>
DistributionTable report_law(const SamplerReport<S>& rep, int K, int L) {
  return empirical_table(rep.states, K, L, rep.log_weights);
}

}  // namespace dalign
