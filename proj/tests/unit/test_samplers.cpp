#include <doctest.h>

#include <cmath>

#include "dalign/core/error.hpp"
#include "dalign/samplers/continuous_guidance.hpp"
#include "dalign/samplers/discrete_guidance.hpp"
#include "dalign/samplers/guidance.hpp"
#include "dalign/values/discrete_values.hpp"
#include "dalign/values/gaussian_values.hpp"
#include "fixtures.hpp"

using namespace dalign;

namespace {

struct Tiny {
  MaskedProcess process = fixtures::tiny_process();
  RewardModel reward = fixtures::tiny_reward();
  DistributionTable pre = process.terminal_law();

  OracleTarget oracle(double alpha) const { return brute_force_target(pre, reward, alpha); }
  DiscreteValueModel values(double alpha) const {
    return ExactDiscreteValues(process, reward, alpha).model();
  }
};

GuidanceConfig config(int N, int M, double alpha, std::uint64_t seed) {
  GuidanceConfig cfg;
  cfg.N = N;
  cfg.M = M;
  cfg.alpha = alpha;
  cfg.seed = seed;
  return cfg;
}

double law_tv(const SamplerReport<DiscreteSequence>& rep, const DistributionTable& target) {
  return tv_distance(report_law(rep, target.K, target.L), target);
}

GaussianProcess standard_normal_process(int T) {
  GaussianMixtureData d;
  d.components = {{1.0, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)}};
  return GaussianProcess(d, make_schedule(ScheduleKind::linear, T));
}

std::pair<double, double> moments(const std::vector<ContinuousState>& xs) {
  double m = 0, m2 = 0;
  for (const auto& x : xs) {
    m += x[0];
    m2 += x[0] * x[0];
  }
  m /= xs.size();
  return {m, m2 / xs.size() - m * m};
}

}  // namespace

TEST_SUITE("samplers") {

TEST_CASE("best of N") {
  Tiny k;
  auto one = best_of_n(k.process, k.reward, 1, 21);
  auto plain = sample_pretrained(k.process, k.reward, config(1, 1, 1.0, 21));
  CHECK(one.best == plain.states[0]);

  MaskedProcess two(DistributionTable::from_masses(2, 1, {0.75, 0.25}),
                    make_schedule(ScheduleKind::linear, 3));
  const auto r = RewardModel::table(2, 1, {{"B", 1.0}});
  const int reps = 100000;
  double s = 0, s2 = 0;
  for (int i = 0; i < reps; ++i) {
    auto b = best_of_n(two, r, 2, 1000 + i);
    const double v = b.rewards[b.best_index];
    s += v;
    s2 += v * v;
  }
  const double mean = s / reps;
  const double se = std::sqrt((s2 / reps - mean * mean) / reps);
  CHECK(std::abs(mean - 0.4375) < 3 * se);

  auto many = best_of_n(k.process, k.reward, 200, 3);
  CHECK(many.rewards[many.best_index] == 1.0);
  for (std::size_t i = 0; i < static_cast<std::size_t>(many.best_index); ++i)
    CHECK(many.rewards[i] < 1.0);
}

TEST_CASE("smc guidance") {
  Tiny k;
  auto flat = smc_guidance(k.process, constant_value<DiscreteSequence>(0.4),
                           RewardModel::constant(0.4), config(10000, 1, 1.0, 5));
  CHECK(flat.resample_steps.empty());
  for (double w : flat.log_weights) CHECK(w == flat.log_weights[0]);
  for (double e : flat.ess_trace) CHECK(e == doctest::Approx(10000.0));
  CHECK(flat.ess_trace.size() == 9);
  CHECK(law_tv(flat, k.pre) < 0.05);

  auto rep = smc_guidance(k.process, k.values(1.0), k.reward, config(10000, 1, 1.0, 6));
  CHECK(law_tv(rep, k.oracle(1.0).table) < 0.05);
  CHECK(rep.ess_trace.size() == 9);
  for (double e : rep.ess_trace) {
    CHECK(e >= 1.0);
    CHECK(e <= 10000.0 + 1e-9);
  }

  auto cold = smc_guidance(k.process, k.values(1e6), k.reward, config(10000, 1, 1e6, 7));
  CHECK(law_tv(cold, k.pre) < 0.05);

  CHECK_THROWS_AS(smc_guidance(k.process, k.values(1.0), k.reward, config(10, 1, 0.0, 1)), Error);
}

TEST_CASE("smc weights telescope without resampling") {
  Tiny k;
  auto cfg = config(20000, 1, 1.0, 8);
  cfg.ess_threshold = 1e-9;
  auto rep = smc_guidance(k.process, k.values(1.0), k.reward, cfg);
  CHECK(rep.resample_steps.empty());
  const double lse = kernels::log_sum_exp(rep.log_weights);
  double mean = 0.0;
  for (std::size_t i = 0; i < rep.states.size(); ++i)
    mean += std::exp(rep.log_weights[i] - lse) * rep.rewards[i];
  double var = 0.0;
  for (std::size_t i = 0; i < rep.states.size(); ++i) {
    const double w = std::exp(rep.log_weights[i] - lse);
    var += w * w * (rep.rewards[i] - mean) * (rep.rewards[i] - mean);
  }
  const auto o = k.oracle(1.0);
  double target = 0.0;
  for (std::int64_t i = 0; i < o.table.size(); ++i)
    target += o.table.prob[i] * k.reward.eval(o.table.sequence(i));
  CHECK(std::abs(mean - target) < 2 * std::sqrt(var));
  CHECK(std::abs(std::exp(rep.log_normalizer - o.logZ) - 1.0) < 0.02);
}

TEST_CASE("systematic resampling keeps the target") {
  Tiny k;
  auto cfg = config(10000, 1, 0.5, 9);
  cfg.resampling = Resampling::systematic;
  cfg.ess_threshold = 1.0;
  auto rep = smc_guidance(k.process, k.values(0.5), k.reward, cfg);
  CHECK_FALSE(rep.resample_steps.empty());
  CHECK(law_tv(rep, k.oracle(0.5).table) < 0.05);
}

TEST_CASE("svdd") {
  Tiny k;
  auto cfg = config(500, 1, 1.0, 10);
  auto a = svdd(k.process, k.values(1.0), k.reward, cfg);
  auto b = sample_with_kernel(k.process, pretrained_kernel(k.process), k.reward, cfg);
  CHECK(a.states == b.states);

  auto rep = svdd(k.process, k.values(1.0), k.reward, config(10000, 32, 1.0, 11));
  CHECK(law_tv(rep, k.oracle(1.0).table) < 0.05);

  cfg = config(500, 4, 0.0, 12);
  cfg.record_trajectories = true;
  auto greedy = svdd(k.process, k.values(1.0), k.reward, cfg);
  auto beam = beam_search(k.process, k.values(1.0), k.reward, cfg);
  CHECK(greedy.states == beam.states);
  CHECK(greedy.trajectories == beam.trajectories);
}

TEST_CASE("smc with a guided proposal keeps the target") {
  Tiny k;
  // exact-mode rows at another alpha keep the full pre-trained support
  auto q = guided_discrete_kernel(k.process, k.values(0.5), 0.5, DiscreteGuidanceMode::exact);
  auto rep = smc_guidance(k.process, k.values(1.0), k.reward, config(10000, 1, 1.0, 13), &q);
  CHECK(law_tv(rep, k.oracle(1.0).table) < 0.05);
}

TEST_CASE("nested smc") {
  Tiny k;
  auto rep = nested_smc(k.process, k.values(1.0), k.reward, config(10000, 4, 1.0, 14));
  CHECK(law_tv(rep, k.oracle(1.0).table) < 0.05);
  CHECK(rep.ess_trace.size() == 9);
  CHECK(rep.resample_steps.size() == 8);

  auto m1 = nested_smc(k.process, k.values(1.0), k.reward, config(10000, 1, 1.0, 15));
  CHECK(law_tv(m1, k.oracle(1.0).table) < 0.05);

  auto single = nested_smc(k.process, k.values(1.0), k.reward, config(1, 8, 1.0, 16));
  auto sv = svdd(k.process, k.values(1.0), k.reward, config(1, 8, 1.0, 16));
  CHECK(single.states == sv.states);

  // a crude value model still gives an unbiased normalizer estimate
  const auto pm = posterior_mean_model(k.process, k.reward);
  const double Z = std::exp(k.oracle(1.0).logZ);
  double mean = 0.0;
  const int runs = 40;
  for (int i = 0; i < runs; ++i)
    mean += std::exp(nested_smc(k.process, pm, k.reward, config(500, 4, 1.0, 100 + i)).log_normalizer);
  mean /= runs;
  CHECK(std::abs(mean / Z - 1.0) < 0.05);
}

TEST_CASE("beam search") {
  Tiny k;
  const auto v = k.values(1.0);
  double prev = -1.0;
  for (int M : {1, 4, 16}) {
    auto rep = beam_search(k.process, v, k.reward, config(10000, M, 1.0, 17));
    double hits = 0;
    for (const auto& x : rep.states) hits += x == DiscreteSequence::parse("BB", 2);
    CHECK(hits / 10000 > prev);
    prev = hits / 10000;
  }
  auto flat = beam_search(k.process, constant_value<DiscreteSequence>(0.0), k.reward,
                          config(10000, 4, 1.0, 18));
  CHECK(law_tv(flat, k.pre) < 0.05);
  auto m1 = beam_search(k.process, v, k.reward, config(300, 1, 1.0, 19));
  auto plain = sample_pretrained(k.process, k.reward, config(300, 1, 1.0, 19));
  CHECK(m1.states == plain.states);
}

TEST_CASE("results do not depend on the thread count") {
  Tiny k;
  auto cfg = config(2000, 4, 1.0, 20);
  auto a = nested_smc(k.process, k.values(1.0), k.reward, cfg);
  auto b = svdd(k.process, k.values(1.0), k.reward, cfg);
  cfg.threads = 4;
  auto c = nested_smc(k.process, k.values(1.0), k.reward, cfg);
  auto d = svdd(k.process, k.values(1.0), k.reward, cfg);
  CHECK(a.states == c.states);
  CHECK(a.log_normalizer == c.log_normalizer);
  CHECK(b.states == d.states);
}

TEST_CASE("continuous classifier guidance") {
  auto proc = standard_normal_process(200);
  Eigen::VectorXd c(1);
  c << 1.0;
  const auto r = RewardModel::linear(c);
  auto guided = classifier_guidance_continuous(proc, gaussian_linear_value_model(proc, c, 0.0, 1.0),
                                               r, config(20000, 1, 1.0, 22));
  auto [m, v] = moments(guided.states);
  CHECK(std::abs(m - 1.0) < 0.05);
  CHECK(std::abs(v - 1.0) < 0.1);

  auto zero = classifier_guidance_continuous(proc, constant_value<ContinuousState>(0.0), r,
                                             config(20000, 1, 1.0, 23));
  auto [m0, v0] = moments(zero.states);
  CHECK(std::abs(m0) < 0.05);
  CHECK(std::abs(v0 - 1.0) < 0.05);

  auto cold = classifier_guidance_continuous(proc, gaussian_linear_value_model(proc, c, 0.0, 1e6),
                                             r, config(20000, 1, 1e6, 23));
  CHECK((cold.states[0] - zero.states[0]).norm() < 1e-4);

  ContinuousValueModel opaque;
  opaque.eval = [](int, const Eigen::VectorXd&) { return 0.0; };
  opaque.differentiable = false;
  try {
    classifier_guidance_continuous(proc, opaque, r, config(2, 1, 1.0, 1));
    FAIL("expected unsupported value model");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::unsupported_value_model);
  }
}

TEST_CASE("smc guidance on a continuous process") {
  auto proc = standard_normal_process(50);
  Eigen::VectorXd c(1);
  c << 1.0;
  const auto r = RewardModel::linear(c);
  auto rep = smc_guidance(proc, gaussian_linear_value_model(proc, c, 0.0, 1.0), r,
                          config(20000, 1, 1.0, 24));
  CHECK(rep.ess_trace.size() == 51);
  // The model law is Gaussian with variance from the linear backward
  // recursion (the exact denoiser of N(0,1) data is sqrt(ab) x), so the
  // tilted mean equals that variance.
  const auto& s = proc.schedule();
  double var = 1.0;
  for (int t = proc.horizon(); t >= 1; --t) {
    const double k = (std::sqrt(s.alpha[t]) * (1 - s.alpha_bar[t - 1]) +
                      std::sqrt(s.alpha_bar[t - 1]) * (1 - s.alpha[t]) * std::sqrt(s.alpha_bar[t])) /
                     (1 - s.alpha_bar[t]);
    var = k * k * var + s.sigma2[t];
  }
  CHECK(var < 0.95);
  CHECK(std::abs(rep.mean_reward - var) < 0.03);
}

TEST_CASE("so3 guidance") {
  SO3Process proc;
  proc.kappa = 2.0;
  proc.T = 50;
  Rng rng(25);
  const auto target = so3_uniform(rng);
  const auto r = RewardModel::frobenius(target, 1.0);
  auto cfg = config(300, 1, 0.5, 26);
  auto g = classifier_guidance_so3(proc, r, cfg, true);
  auto u = classifier_guidance_so3(proc, r, cfg, false);
  CHECK(g.max_manifold_error < 1e-9);
  CHECK(u.max_manifold_error < 1e-9);
  double d = 0, d2 = 0;
  for (int i = 0; i < cfg.N; ++i) {
    const double x = g.report.rewards[i] - u.report.rewards[i];
    d += x;
    d2 += x * x;
  }
  d /= cfg.N;
  const double se = std::sqrt((d2 / cfg.N - d * d) / cfg.N);
  CHECK(d > 3 * se);

  auto flat = classifier_guidance_so3(proc, RewardModel::frobenius(Eigen::Matrix3d::Zero()), cfg, true);
  for (int i = 0; i < cfg.N; ++i) CHECK(flat.report.states[i] == u.report.states[i]);
}

TEST_CASE("discrete exact guidance") {
  Tiny k;
  const auto flat = constant_value<DiscreteSequence>(0.3);
  const auto v = k.values(1.0);
  for (std::int64_t code = 0; code < k.process.num_states(); ++code) {
    const auto x = decode_state(code, 2, 2);
    for (int t = 1; t <= 8; ++t) {
      const auto pre = k.process.step_rows(x, t);
      CHECK((guided_step_rows(k.process, flat, 1.0, x, t, DiscreteGuidanceMode::exact) - pre)
                .cwiseAbs()
                .maxCoeff() < 1e-15);
      CHECK((guided_step_rows(k.process, flat, 1.0, x, t, DiscreteGuidanceMode::taylor) - pre)
                .cwiseAbs()
                .maxCoeff() < 1e-15);
      for (auto mode : {DiscreteGuidanceMode::exact, DiscreteGuidanceMode::taylor}) {
        const auto rows = guided_step_rows(k.process, v, 0.2, x, t, mode);
        for (int l = 0; l < 2; ++l) {
          CHECK(std::abs(rows.row(l).sum() - 1.0) < 1e-10);
          CHECK(rows.row(l).minCoeff() >= 0.0);
        }
      }
    }
  }

  auto rep = discrete_guidance_exact(k.process, v, k.reward, config(100000, 1, 1.0, 27));
  CHECK(law_tv(rep, k.oracle(1.0).table) < 0.02);
}

TEST_CASE("taylor guidance against exact guidance") {
  Tiny k;
  const double alpha = 10.0;
  const auto v = k.values(alpha);
  for (std::int64_t code = 0; code < k.process.num_states(); ++code) {
    const auto x = decode_state(code, 2, 2);
    if (x.masked_count() == 0) continue;
    for (int t = 1; t <= 8; ++t) {
      const auto fe = guidance_factors(k.process, v, alpha, x, t, DiscreteGuidanceMode::exact);
      const auto ft = guidance_factors(k.process, v, alpha, x, t, DiscreteGuidanceMode::taylor);
      for (int l = 0; l < 2; ++l) {
        if (!x.is_masked(l)) continue;
        for (int tok = 0; tok < 2; ++tok) {
          const double u = std::log(fe(l, tok));
          REQUIRE(std::abs(u) < 0.1);
          // exact relaxed values make the Taylor exponent the exact value difference
          CHECK(ft(l, tok) == doctest::Approx(1.0 + u).epsilon(1e-9));
          CHECK(std::abs(ft(l, tok) - fe(l, tok)) / fe(l, tok) < 0.006);
        }
      }
    }
  }

  const auto v1 = k.values(1.0);
  auto exact_law = rows_terminal_law(k.process, [&](const DiscreteSequence& x, int t) {
    return guided_step_rows(k.process, v1, 1.0, x, t, DiscreteGuidanceMode::exact);
  });
  auto taylor_law = rows_terminal_law(k.process, [&](const DiscreteSequence& x, int t) {
    return guided_step_rows(k.process, v1, 1.0, x, t, DiscreteGuidanceMode::taylor);
  });
  CHECK(tv_distance(exact_law, taylor_law) < 0.05);
  CHECK(tv_distance(exact_law, k.oracle(1.0).table) < 0.02);
  auto rep = discrete_guidance_taylor(k.process, v1, k.reward, config(20000, 1, 1.0, 28));
  CHECK(law_tv(rep, taylor_law) < 0.02);
}

TEST_CASE("walk jump") {
  GaussianMixtureData data;
  data.components = {{1.0, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)}};
  const double s2 = 0.5;
  const auto smooth = data.smoothed(s2);
  const ScoreFn score = [&](const Eigen::VectorXd& y) { return smooth.score(y); };
  Eigen::VectorXd c(1);
  c << 1.0;
  Rng rng(29);
  const long steps = 400000;
  auto chain = walk_jump(score, RewardModel::linear(c), 1.0, 0.05, steps, Eigen::VectorXd::Zero(1), rng);
  CHECK(chain.rows() == steps + 1);
  double m = 0;
  int n = 0;
  for (long s = 1000; s <= steps; s += 10, ++n) m += chain(s, 0);
  CHECK(std::abs(m / n - (1.0 + s2)) < 0.05);

  // zero reward: compare a histogram to the smoothed density
  Rng rng2(30);
  auto flat = walk_jump(score, RewardModel::linear(Eigen::VectorXd::Zero(1)), 1.0, 0.05, steps,
                        Eigen::VectorXd::Zero(1), rng2);
  const int bins = 40;
  const double lo = -5, hi = 5, w = (hi - lo) / bins;
  std::vector<double> hist(bins, 0.0), dens(bins, 0.0);
  int kept = 0;
  for (long s = 1000; s <= steps; s += 10, ++kept) {
    const int b = static_cast<int>((flat(s, 0) - lo) / w);
    if (b >= 0 && b < bins) hist[b] += 1.0;
  }
  for (auto& h : hist) h /= kept;
  const double sd = std::sqrt(1.0 + s2);
  for (int b = 0; b < bins; ++b)
    dens[b] = 0.5 * (std::erf((lo + (b + 1) * w) / (sd * std::sqrt(2.0))) -
                     std::erf((lo + b * w) / (sd * std::sqrt(2.0))));
  CHECK(fixtures::tv(hist, dens) < 0.05);

  Rng rng3(31);
  auto tiny = walk_jump(score, RewardModel::linear(c), 1.0, 1e-12, 1, Eigen::VectorXd::Ones(1), rng3);
  CHECK(std::abs(tiny(1, 0) - tiny(0, 0)) < 1e-5);

  Rng rng4(32);
  CHECK_THROWS_AS(walk_jump(score, RewardModel::custom([](const DiscreteSequence&) { return 0.0; }),
                            1.0, 0.1, 3, Eigen::VectorXd::Zero(1), rng4),
                  Error);
}

}  // TEST_SUITE
