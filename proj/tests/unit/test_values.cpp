#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "dalign/core/error.hpp"
#include "dalign/values/discrete_values.hpp"
#include "dalign/values/gaussian_values.hpp"
#include "fixtures.hpp"

using namespace dalign;

namespace {

MaskedProcess single_position() {
  return MaskedProcess(DistributionTable::from_masses(2, 1, {0.75, 0.25}),
                       make_schedule(ScheduleKind::linear, 4));
}

// E[exp(v_{t-1}/alpha) | x_t] by enumerating the kernel rows.
double bellman_rhs(const MaskedProcess& p, const ExactDiscreteValues& v, int t,
                   const DiscreteSequence& x) {
  double s = 0.0;
  MaskedProcess::for_each_successor(x, p.step_rows(x, t), [&](std::int64_t c, double q) {
    s += q * std::exp(v.value_code(t - 1, c) / v.alpha());
  });
  return s;
}

}  // namespace

TEST_SUITE("values") {

TEST_CASE("exact value boundary and closed instances") {
  auto p = single_position();
  auto r = RewardModel::table(2, 1, {{"A", 0.0}, {"B", 1.0}});
  CHECK(exact_value_discrete(p, r, 1.0, 0, DiscreteSequence::parse("B", 2)) == 1.0);
  CHECK(exact_value_discrete(p, r, 1.0, 0, DiscreteSequence::parse("A", 2)) == 0.0);
  const double vT = exact_value_discrete(p, r, 1.0, 4, fully_masked(2, 1));
  CHECK(vT == doctest::Approx(std::log(0.75 + 0.25 * std::exp(1.0))).epsilon(1e-13));
  CHECK(vT == doctest::Approx(0.35737).epsilon(1e-5));

  auto tiny = fixtures::tiny_process();
  ExactDiscreteValues c(tiny, RewardModel::constant(0.7), 0.3);
  for (int t = 0; t <= 8; ++t)
    for (std::int64_t code = 0; code < tiny.num_states(); ++code)
      if (!std::isnan(c.value_code(t, code))) CHECK(c.value_code(t, code) == doctest::Approx(0.7));

  CHECK_THROWS_AS(ExactDiscreteValues(tiny, fixtures::tiny_reward(), 0.0), Error);
  CHECK_THROWS_AS(exact_value_discrete(tiny, fixtures::tiny_reward(), -1.0, 1, fully_masked(2, 2)),
                  Error);
}

TEST_CASE("soft-Bellman residual and recursion") {
  auto p = fixtures::tiny_process();
  const auto r = fixtures::tiny_reward();
  for (double alpha : {1.0, 0.3}) {
    ExactDiscreteValues v(p, r, alpha);
    double worst = 0.0;
    for (int t = 1; t <= p.horizon(); ++t)
      for (std::int64_t code = 0; code < p.num_states(); ++code) {
        if (std::isnan(v.value_code(t, code))) continue;
        const auto x = decode_state(code, 2, 2);
        worst = std::max(worst,
                         std::abs(bellman_rhs(p, v, t, x) - std::exp(v.value_code(t, code) / alpha)));
      }
    CHECK(worst < 1e-10);
    const auto root = fully_masked(2, 2);
    CHECK(std::abs(v.value(8, root) - direct_value_discrete(p, r, alpha, 8, root)) < 1e-10);
    for (auto s : {"A_", "_B", "BA"})
      CHECK(std::abs(v.value(4, DiscreteSequence::parse(s, 2)) -
                     direct_value_discrete(p, r, alpha, 4, DiscreteSequence::parse(s, 2))) < 1e-10);
  }
}

TEST_CASE("values sharpen as alpha decreases") {
  auto p = fixtures::tiny_process();
  const auto r = fixtures::tiny_reward();
  const auto x = fully_masked(2, 2);
  double prev = -std::numeric_limits<double>::infinity();
  for (double alpha : {10.0, 3.0, 1.0, 0.5, 0.2, 0.1}) {
    const double v = exact_value_discrete(p, r, alpha, 8, x);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("posterior mean value") {
  auto p = single_position();
  auto r = RewardModel::table(2, 1, {{"A", 0.0}, {"B", 1.0}});
  CHECK(posterior_mean_value(p, r, 4, fully_masked(2, 1)) == doctest::Approx(0.25));
  CHECK(posterior_mean_value(p, r, 0, DiscreteSequence::parse("B", 2)) == 1.0);

  // Jensen gap on the tiny instance
  auto tiny = fixtures::tiny_process();
  const auto tr = fixtures::tiny_reward();
  ExactDiscreteValues v(tiny, tr, 1.0);
  for (int t = 1; t <= 8; ++t)
    for (std::int64_t code = 0; code < tiny.num_states(); ++code) {
      if (std::isnan(v.value_code(t, code))) continue;
      const auto x = decode_state(code, 2, 2);
      CHECK(posterior_mean_value(tiny, tr, t, x) <= v.value_code(t, code) + 1e-12);
    }

  // point-mass data: every value is the reward of that point
  MaskedProcess point(DistributionTable::from_entries(2, 2, {{"BA", 1.0}}),
                      make_schedule(ScheduleKind::linear, 6));
  ExactDiscreteValues pv(point, tr, 1.0);
  for (int t = 0; t <= 6; ++t)
    for (auto s : {"__", "B_", "_A", "BA"}) {
      const auto x = DiscreteSequence::parse(s, 2);
      CHECK(posterior_mean_value(point, tr, t, x) == doctest::Approx(pv.value(t, x)).epsilon(1e-12));
    }
}

TEST_CASE("monte carlo regression") {
  auto tiny = fixtures::tiny_process();
  FitOptions opts;
  opts.rollouts = 2000;
  auto c = mc_regression_fit(tiny, RewardModel::constant(1.25), 1.0, opts);
  for (int t = 0; t <= 8; ++t)
    for (std::int64_t code = 0; code < tiny.num_states(); ++code)
      if (c.has_cell(t, code))
        CHECK(c.value(t, decode_state(code, 2, 2)) == doctest::Approx(1.25).epsilon(1e-12));

  const auto r = fixtures::tiny_reward();
  opts.rollouts = 1;
  auto one = mc_regression_fit(tiny, r, 1.0, opts);
  CHECK(one.cell_count() == 9);
  std::stringstream ss;
  one.export_table(ss);
  std::string line;
  std::getline(ss, line);
  CHECK(line == "t,state,v");
  double v0 = std::numeric_limits<double>::quiet_NaN();
  int rows = 0;
  while (std::getline(ss, line)) {
    const double v = std::stod(line.substr(line.rfind(',') + 1));
    if (std::isnan(v0)) v0 = v;
    CHECK(v == doctest::Approx(v0).epsilon(1e-12));
    ++rows;
  }
  CHECK(rows == 9);

  opts.rollouts = 100000;
  opts.seed = 3;
  auto fit = mc_regression_fit(tiny, r, 1.0, opts);
  ExactDiscreteValues ex(tiny, r, 1.0);
  double worst = 0.0;
  for (int t = 0; t <= 8; ++t)
    for (std::int64_t code = 0; code < tiny.num_states(); ++code)
      if (fit.has_cell(t, code))
        worst = std::max(worst, std::abs(fit.value(t, decode_state(code, 2, 2)) - ex.value_code(t, code)));
  CHECK(worst < 0.02);

  // unseen cells fall back to the posterior mean and are counted
  const auto before = one.fallback_count();
  const auto x = DiscreteSequence::parse("_A", 2);
  int t_unseen = -1;
  for (int t = 1; t <= 8 && t_unseen < 0; ++t)
    if (!one.has_cell(t, encode_state(x))) t_unseen = t;
  REQUIRE(t_unseen > 0);
  CHECK(one.value(t_unseen, x) == doctest::Approx(posterior_mean_value(tiny, r, t_unseen, x)));
  CHECK(one.fallback_count() == before + 1);
}

TEST_CASE("soft Q iteration") {
  auto tiny = fixtures::tiny_process();
  const auto r = fixtures::tiny_reward();
  ExactDiscreteValues ex(tiny, r, 1.0);
  FitOptions opts;
  opts.rollouts = 2000;
  opts.iterations = 3;
  auto c = soft_q_fit(tiny, RewardModel::constant(-0.5), 1.0, opts);
  for (int t = 0; t <= 8; ++t)
    for (std::int64_t code = 0; code < tiny.num_states(); ++code)
      if (c.has_cell(t, code))
        CHECK(c.value(t, decode_state(code, 2, 2)) == doctest::Approx(-0.5).epsilon(1e-12));

  opts.rollouts = 100000;
  opts.iterations = 1;
  opts.seed = 5;
  auto one = soft_q_fit(tiny, r, 1.0, opts);
  for (std::int64_t code = 0; code < tiny.num_states(); ++code)
    if (one.has_cell(1, code))
      CHECK(std::abs(one.value(1, decode_state(code, 2, 2)) - ex.value_code(1, code)) < 0.05);

  opts.iterations = 8;
  auto fit = soft_q_fit(tiny, r, 1.0, opts);
  double worst = 0.0;
  for (int t = 0; t <= 8; ++t)
    for (std::int64_t code = 0; code < tiny.num_states(); ++code)
      if (fit.has_cell(t, code))
        worst = std::max(worst, std::abs(fit.value(t, decode_state(code, 2, 2)) - ex.value_code(t, code)));
  CHECK(worst < 0.02);

  opts.space = FitSpace::log_space;
  auto logfit = soft_q_fit(tiny, RewardModel::constant(2.0), 1.0, opts);
  CHECK(logfit.value(8, fully_masked(2, 2)) == doctest::Approx(2.0));
}

TEST_CASE("closed form gaussian values") {
  CHECK(closed_form_gaussian_value(0.5, 0.2, 0.0, 1.0) == 0.0);
  CHECK(closed_form_gaussian_value(0.5, 0.2, 1.0, 1.0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(closed_form_gaussian_value(0.5, 0.2, 1.0, 1e12) == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("gaussian linear value model") {
  GaussianMixtureData data;
  Eigen::VectorXd m1(1), m2(1), v1(1), v2(1);
  m1 << -1.0;
  m2 << 2.0;
  v1 << 0.3;
  v2 << 0.1;
  data.components = {{0.4, m1, v1}, {0.6, m2, v2}};
  GaussianProcess proc(data, make_schedule(ScheduleKind::linear, 20));
  Eigen::VectorXd c(1);
  c << 0.8;
  const double alpha = 0.5;
  auto v = gaussian_linear_value_model(proc, c, 0.1, alpha);
  for (int t : {3, 10, 19}) {
    for (double xt : {-1.0, 0.4, 1.5}) {
      Eigen::VectorXd x(1);
      x << xt;
      // quadrature over x0 of p(x0) N(xt; sqrt(ab) x0, 1 - ab) exp(r(x0)/alpha)
      const double ab = proc.schedule().alpha_bar[t];
      double num = 0, den = 0;
      const int n = 100000;
      const double lo = -12, hi = 12, h = (hi - lo) / n;
      for (int i = 0; i <= n; ++i) {
        Eigen::VectorXd x0(1);
        x0 << lo + i * h;
        const double w = std::exp(data.log_density(x0) +
                                  gaussian_logpdf(x, std::sqrt(ab) * x0, 1 - ab));
        num += w * std::exp((0.8 * x0[0] + 0.1) / alpha);
        den += w;
      }
      CHECK(v(t, x) == doctest::Approx(alpha * std::log(num / den)).epsilon(1e-6));
      const double hh = 1e-5;
      Eigen::VectorXd a = x, b = x;
      a[0] += hh;
      b[0] -= hh;
      const double fd = (v(t, a) - v(t, b)) / (2 * hh);
      CHECK(v.gradient(t, x)[0] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
  Eigen::VectorXd x(1);
  x << 0.3;
  CHECK(v(0, x) == doctest::Approx(0.8 * 0.3 + 0.1));
}

TEST_CASE("finite-difference gradient fallback") {
  ContinuousValueModel v;
  v.eval = [](int, const Eigen::VectorXd& x) { return std::sin(x[0]) * x[1]; };
  Eigen::VectorXd x(2);
  x << 0.4, -1.3;
  const auto g = value_gradient(v, 1, x);
  CHECK(g[0] == doctest::Approx(std::cos(0.4) * -1.3).epsilon(1e-7));
  CHECK(g[1] == doctest::Approx(std::sin(0.4)).epsilon(1e-7));
  v.differentiable = false;
  try {
    value_gradient(v, 1, x);
    FAIL("expected unsupported value model");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::unsupported_value_model);
  }
}

}  // TEST_SUITE
