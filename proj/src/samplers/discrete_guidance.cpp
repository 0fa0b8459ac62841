#include "dalign/samplers/discrete_guidance.hpp"

#include <cmath>
#include <mutex>
#include <shared_mutex>
#include <unordered_map>

namespace dalign {
namespace {

/// Partials of the relaxed value at the one-hot view of x, by unit forward
/// differences (exact because the relaxation is affine in each entry).
Eigen::MatrixXd relaxed_partials(const DiscreteValueModel& values, int t,
                                 const DiscreteSequence& x) {
  require(static_cast<bool>(values.relaxed), Errc::unsupported_value_model,
          "Taylor guidance needs a relaxed value evaluator");
  Eigen::MatrixXd P = x.onehot();
  const double base = values.relaxed(t, P);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(P.rows(), P.cols());
  for (int l = 0; l < x.length(); ++l) {
    if (!x.is_masked(l)) continue;
    for (int k = 0; k <= x.K; ++k) {
      P(l, k) += 1.0;
      g(l, k) = values.relaxed(t, P) - base;
      P(l, k) -= 1.0;
    }
  }
  return g;
}

}  // namespace

Eigen::MatrixXd guidance_factors(const MaskedProcess& process, const DiscreteValueModel& values,
                                 double alpha, const DiscreteSequence& x, int t,
                                 DiscreteGuidanceMode mode) {
  require(alpha > 0.0, Errc::invalid_argument, "discrete guidance needs alpha > 0");
  require(t >= 1 && t <= process.horizon(), Errc::invalid_argument, "step index out of range");
  const int K = x.K;
  Eigen::MatrixXd f = Eigen::MatrixXd::Ones(x.length(), K);
  if (mode == DiscreteGuidanceMode::exact) {
    const double v_stay = values(t - 1, x);
    DiscreteSequence y = x;
    for (int l = 0; l < x.length(); ++l) {
      if (!x.is_masked(l)) continue;
      for (int k = 0; k < K; ++k) {
        y.tokens[l] = k;
        f(l, k) = std::exp((values(t - 1, y) - v_stay) / alpha);
      }
      y.tokens[l] = K;
    }
  } else {
    const Eigen::MatrixXd g = relaxed_partials(values, t - 1, x);
    for (int l = 0; l < x.length(); ++l) {
      if (!x.is_masked(l)) continue;
      for (int k = 0; k < K; ++k) f(l, k) = 1.0 + (g(l, k) - g(l, K)) / alpha;
    }
  }
  return f;
}

StepRows guided_step_rows(const MaskedProcess& process, const DiscreteValueModel& values,
                          double alpha, const DiscreteSequence& x, int t,
                          DiscreteGuidanceMode mode) {
  StepRows rows = process.step_rows(x, t);
  if (x.masked_count() == 0) return rows;
  const Eigen::MatrixXd f = guidance_factors(process, values, alpha, x, t, mode);
  const int K = x.K;
  for (int l = 0; l < x.length(); ++l) {
    if (!x.is_masked(l)) continue;
    const bool forced = rows(l, K) == 0.0;
    double moves = 0.0;
    for (int k = 0; k < K; ++k) {
      rows(l, k) *= std::max(0.0, f(l, k));
      moves += rows(l, k);
    }
    const double stay = 1.0 - moves;
    if (forced || stay < 0.0) {
      require(moves > 0.0, Errc::degenerate_weights, "guided row has no admissible move");
      for (int k = 0; k < K; ++k) rows(l, k) /= moves;
      rows(l, K) = 0.0;
    } else {
      rows(l, K) = stay;
    }
  }
  return rows;
}

namespace {

struct RowCache {
  std::shared_mutex mutex;
  std::unordered_map<std::int64_t, StepRows> rows;  // key: t * states + code
};

DiscreteSequence sample_rows(const DiscreteSequence& x, const StepRows& rows, Rng& rng) {
  DiscreteSequence next = x;
  for (int l = 0; l < x.length(); ++l) {
    if (!x.is_masked(l)) continue;
    const double u = uniform01(rng);
    double acc = 0.0;
    int pick = -1;
    for (int k = 0; k <= x.K; ++k) {
      if (rows(l, k) <= 0.0) continue;
      pick = k;
      acc += rows(l, k);
      if (u < acc) break;
    }
    next.tokens[l] = pick;
  }
  return next;
}

}  // namespace

TransitionKernel<DiscreteSequence> guided_discrete_kernel(const MaskedProcess& process,
                                                          const DiscreteValueModel& values,
                                                          double alpha, DiscreteGuidanceMode mode) {
  require(alpha > 0.0, Errc::invalid_argument, "discrete guidance needs alpha > 0");
  auto cache = std::make_shared<RowCache>();
  const MaskedProcess* p = &process;
  auto rows_for = [cache, p, values, alpha, mode](const DiscreteSequence& x, int t) {
    const std::int64_t key = static_cast<std::int64_t>(t) * p->num_states() + encode_state(x);
    {
      std::shared_lock lock(cache->mutex);
      const auto it = cache->rows.find(key);
      if (it != cache->rows.end()) return it->second;
    }
    StepRows rows = guided_step_rows(*p, values, alpha, x, t, mode);
    std::unique_lock lock(cache->mutex);
    cache->rows.emplace(key, rows);
    return rows;
  };
  TransitionKernel<DiscreteSequence> k;
  k.kind = KernelKind::guided;
  k.sample = [rows_for](const DiscreteSequence& x, int t, Rng& rng) {
    return sample_rows(x, rows_for(x, t), rng);
  };
  k.logprob = [rows_for](const DiscreteSequence& next, const DiscreteSequence& x, int t) {
    const StepRows rows = rows_for(x, t);
    double lp = 0.0;
    for (int l = 0; l < x.length(); ++l) lp += std::log(rows(l, next.tokens[l]));
    return lp;
  };
  return k;
}

SamplerReport<DiscreteSequence> discrete_guidance_exact(
    const MaskedProcess& process, const DiscreteValueModel& values, const RewardModel& r,
    const GuidanceConfig& cfg, const std::optional<SamplerStart<DiscreteSequence>>& start) {
  validate(cfg, false);
  const auto k = guided_discrete_kernel(process, values, cfg.alpha, DiscreteGuidanceMode::exact);
  return sample_with_kernel(process, k, r, cfg, start);
}

SamplerReport<DiscreteSequence> discrete_guidance_taylor(
    const MaskedProcess& process, const DiscreteValueModel& values, const RewardModel& r,
    const GuidanceConfig& cfg, const std::optional<SamplerStart<DiscreteSequence>>& start) {
  validate(cfg, false);
  const auto k = guided_discrete_kernel(process, values, cfg.alpha, DiscreteGuidanceMode::taylor);
  return sample_with_kernel(process, k, r, cfg, start);
}

DistributionTable rows_terminal_law(
    const MaskedProcess& process,
    const std::function<StepRows(const DiscreteSequence&, int)>& rows) {
  const std::int64_t n = process.num_states();
  std::vector<double> cur(n, 0.0), next(n, 0.0);
  cur[encode_state(fully_masked(process.K(), process.L()))] = 1.0;
  for (int t = process.horizon(); t >= 1; --t) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::int64_t code = 0; code < n; ++code) {
      if (cur[code] == 0.0) continue;
      const double mass = cur[code];
      const auto x = decode_state(code, process.K(), process.L());
      MaskedProcess::for_each_successor(x, rows(x, t),
                                        [&](std::int64_t c, double p) { next[c] += mass * p; });
    }
    std::swap(cur, next);
  }
  std::vector<double> masses(process.data().size(), 0.0);
  for (std::int64_t code = 0; code < n; ++code) {
    if (cur[code] == 0.0) continue;
    const auto x = decode_state(code, process.K(), process.L());
    require(x.masked_count() == 0, Errc::validation, "kernel left masked tokens at t = 0");
    masses[process.data().index_of(x)] += cur[code];
  }
  return DistributionTable::from_masses(process.K(), process.L(), std::move(masses));
}

}  // namespace dalign
