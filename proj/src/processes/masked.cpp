#include "dalign/processes/masked.hpp"

#include <cmath>

#include "dalign/core/error.hpp"

namespace dalign {
namespace {

constexpr std::int64_t kDenoiserCacheLimit = 1 << 16;

void check_step(int t, const NoiseSchedule& sched) {
  require(t >= 1 && t <= sched.T, Errc::invalid_argument, "backward step index out of range");
  require(sched.alpha_bar[t] < 1.0, Errc::degenerate_step, "alpha_bar_t = 1 at backward step");
}

}  // namespace

DiscreteSequence masked_forward_sample(const DiscreteSequence& x0, int t,
                                       const NoiseSchedule& sched, Rng& rng) {
  require(t >= 0 && t <= sched.T, Errc::invalid_argument, "forward step index out of range");
  require(x0.masked_count() == 0, Errc::invalid_argument, "forward sample needs a clean x0");
  DiscreteSequence xt = x0;
  const double keep = sched.alpha_bar[t];
  for (auto& tok : xt.tokens)
    if (uniform01(rng) >= keep) tok = x0.K;
  return xt;
}

StepRows masked_backward_step(const DiscreteSequence& xt, const Eigen::MatrixXd& x0hat_probs,
                              int t, const NoiseSchedule& sched) {
  check_step(t, sched);
  const int L = xt.length();
  const int K = xt.K;
  require(x0hat_probs.rows() == L && x0hat_probs.cols() == K, Errc::invalid_argument,
          "denoiser rows must be L x K");
  const double ab_prev = sched.alpha_bar[t - 1];
  const double ab = sched.alpha_bar[t];
  const double stay = (1.0 - ab_prev) / (1.0 - ab);
  const double unmask = (ab_prev - ab) / (1.0 - ab);
  StepRows rows = StepRows::Zero(L, K + 1);
  for (int l = 0; l < L; ++l) {
    if (!xt.is_masked(l)) {
      rows(l, xt.tokens[l]) = 1.0;
      continue;
    }
    for (int k = 0; k < K; ++k) rows(l, k) = unmask * x0hat_probs(l, k);
    rows(l, K) = stay;
  }
  return rows;
}

Eigen::MatrixXd exact_denoiser_discrete(const DiscreteSequence& xt, const DistributionTable& data) {
  require(xt.K == data.K && xt.length() == data.L, Errc::invalid_argument,
          "sequence does not match data table shape");
  const int L = data.L;
  const int K = data.K;
  Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(L, K);
  double total = 0.0;
  std::vector<int> tokens(L);
  for (std::int64_t idx = 0; idx < data.size(); ++idx) {
    const double p = data.prob[idx];
    if (p == 0.0) continue;
    std::int64_t rem = idx;
    bool consistent = true;
    for (int l = L - 1; l >= 0; --l) {
      tokens[l] = static_cast<int>(rem % K);
      rem /= K;
      if (!xt.is_masked(l) && xt.tokens[l] != tokens[l]) consistent = false;
    }
    if (!consistent) continue;
    total += p;
    for (int l = 0; l < L; ++l) probs(l, tokens[l]) += p;
  }
  require(total > 0.0, Errc::zero_support,
          "observed tokens of '" + xt.str() + "' have zero probability under the data");
  return probs / total;
}

Generator discrete_generator(const DiscreteSequence& xt, int t,
                             const Eigen::MatrixXd& x0hat_probs, const NoiseSchedule& sched) {
  check_step(t, sched);
  Generator g;
  const double scale =
      (sched.alpha_bar[t - 1] - sched.alpha_bar[t]) / ((1.0 - sched.alpha_bar[t]) * sched.dt);
  for (int l = 0; l < xt.length(); ++l) {
    if (!xt.is_masked(l)) continue;
    for (int k = 0; k < xt.K; ++k) {
      const double rate = scale * x0hat_probs(l, k);
      if (rate == 0.0) continue;
      g.moves.push_back({l, k, rate});
      g.diagonal -= rate;
    }
  }
  return g;
}

MaskedProcess::MaskedProcess(DistributionTable data, NoiseSchedule sched)
    : data_(std::move(data)), sched_(std::move(sched)) {
  data_.validate();
  num_states_ = state_count(data_.K, data_.L);
  if (num_states_ <= kDenoiserCacheLimit) {
    cache_.resize(num_states_);
    for (std::int64_t code = 0; code < num_states_; ++code)
      cache_[code] = denoise_uncached(decode_state(code, K(), L()));
  }
}

Eigen::MatrixXd MaskedProcess::denoise(const State& x) const {
  if (!cache_.empty()) return cache_[encode_state(x)];
  return denoise_uncached(x);
}

Eigen::MatrixXd MaskedProcess::denoise_uncached(const State& x) const {
  try {
    return exact_denoiser_discrete(x, data_);
  } catch (const Error& e) {
    if (e.code() != Errc::zero_support) throw;
  }
  // Independent unmasking can combine observed tokens the data never pairs.
  // Such states still need a kernel; fall back to the unconditional
  // marginals on masked positions.
  Eigen::MatrixXd probs = exact_denoiser_discrete(fully_masked(K(), L()), data_);
  for (int l = 0; l < L(); ++l) {
    if (x.is_masked(l)) continue;
    probs.row(l).setZero();
    probs(l, x.tokens[l]) = 1.0;
  }
  return probs;
}

StepRows MaskedProcess::step_rows(const State& x, int t) const {
  if (x.masked_count() == 0) {
    require(t >= 1 && t <= sched_.T, Errc::invalid_argument, "backward step index out of range");
    StepRows rows = StepRows::Zero(L(), K() + 1);
    for (int l = 0; l < L(); ++l) rows(l, x.tokens[l]) = 1.0;
    return rows;
  }
  return masked_backward_step(x, denoise(x), t, sched_);
}

MaskedProcess::State MaskedProcess::sample_step(const State& x, int t, Rng& rng) const {
  const StepRows rows = step_rows(x, t);
  State next = x;
  for (int l = 0; l < L(); ++l) {
    if (!x.is_masked(l)) continue;
    const double u = uniform01(rng);
    double acc = 0.0;
    int pick = -1;
    for (int k = 0; k <= K(); ++k) {
      if (rows(l, k) <= 0.0) continue;
      pick = k;
      acc += rows(l, k);
      if (u < acc) break;
    }
    next.tokens[l] = pick;
  }
  return next;
}

double MaskedProcess::step_logprob(const State& next, const State& x, int t) const {
  const StepRows rows = step_rows(x, t);
  double lp = 0.0;
  for (int l = 0; l < L(); ++l) lp += std::log(rows(l, next.tokens[l]));
  return lp;
}

MaskedProcess::State MaskedProcess::forward_sample(const State& x0, int t, Rng& rng) const {
  return masked_forward_sample(x0, t, sched_, rng);
}

void MaskedProcess::for_each_successor(const State& x, const StepRows& rows,
                                       const std::function<void(std::int64_t, double)>& fn) {
  const int L = x.length();
  const int base = x.K + 1;
  // Iterative odometer over per-position options with positive probability.
  std::vector<std::vector<int>> options(L);
  for (int l = 0; l < L; ++l)
    for (int k = 0; k < base; ++k)
      if (rows(l, k) > 0.0) options[l].push_back(k);
  std::vector<int> pos(L, 0);
  while (true) {
    std::int64_t code = 0;
    double p = 1.0;
    for (int l = 0; l < L; ++l) {
      const int tok = options[l][pos[l]];
      code = code * base + tok;
      p *= rows(l, tok);
    }
    fn(code, p);
    int l = L - 1;
    while (l >= 0 && ++pos[l] == static_cast<int>(options[l].size())) pos[l--] = 0;
    if (l < 0) break;
  }
}

DistributionTable MaskedProcess::terminal_law() const {
  std::vector<double> cur(num_states_, 0.0), next(num_states_, 0.0);
  cur[encode_state(fully_masked(K(), L()))] = 1.0;
  for (int t = sched_.T; t >= 1; --t) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::int64_t code = 0; code < num_states_; ++code) {
      if (cur[code] == 0.0) continue;
      const double mass = cur[code];
      const State x = decode_state(code, K(), L());
      for_each_successor(x, step_rows(x, t), [&](std::int64_t c, double p) { next[c] += mass * p; });
    }
    std::swap(cur, next);
  }
  std::vector<double> masses(data_.size(), 0.0);
  for (std::int64_t code = 0; code < num_states_; ++code) {
    if (cur[code] == 0.0) continue;
    const State x = decode_state(code, K(), L());
    require(x.masked_count() == 0, Errc::validation,
            "backward process left masked tokens at t = 0");
    masses[data_.index_of(x)] += cur[code];
  }
  return DistributionTable::from_masses(K(), L(), std::move(masses));
}

}  // namespace dalign
