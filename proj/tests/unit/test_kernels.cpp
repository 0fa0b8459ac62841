#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "dalign/core/random.hpp"
#include "dalign/kernels/kernels.hpp"

using namespace dalign;

namespace {

std::vector<double> random_logs(std::size_t n, double scale, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = scale * standard_normal(rng);
  return x;
}

struct IsaGuard {
  kernels::Isa saved = kernels::active_isa();
  ~IsaGuard() { kernels::force_isa(saved); }
};

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("scalar reference kernels") {
  const std::vector<double> x{0.0, std::log(2.0), -std::numeric_limits<double>::infinity()};
  CHECK(kernels::scalar::max_value(x) == std::log(2.0));
  const auto m = kernels::scalar::exp_moments(x, 0.0);
  CHECK(m.sum == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(m.sum_sq == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(kernels::log_sum_exp(x) == doctest::Approx(std::log(3.0)).epsilon(1e-15));
  CHECK(kernels::log_sum_exp(std::vector<double>{}) == -std::numeric_limits<double>::infinity());
  CHECK(kernels::log_sum_exp(std::vector<double>(3, -std::numeric_limits<double>::infinity())) ==
        -std::numeric_limits<double>::infinity());
  // no overflow far from zero
  CHECK(kernels::log_sum_exp(std::vector<double>{1000.0, 1000.0}) ==
        doctest::Approx(1000.0 + std::log(2.0)));
}

#if defined(DALIGN_HAVE_AVX2)
TEST_CASE("avx2 kernels match the scalar reference") {
  if (!kernels::avx2_available()) {
    MESSAGE("CPU lacks AVX2; skipping");
    return;
  }
  for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 17u, 1000u, 4099u}) {
    for (double scale : {1.0, 30.0, 300.0}) {
      auto x = random_logs(n, scale, n * 7 + static_cast<std::uint64_t>(scale));
      if (n > 2) x[1] = -std::numeric_limits<double>::infinity();
      const double mx_s = kernels::scalar::max_value(x);
      const double mx_v = kernels::avx2::max_value(x);
      CHECK(mx_s == mx_v);
      const double shift = n ? mx_s : 0.0;
      const auto a = kernels::scalar::exp_moments(x, shift);
      const auto b = kernels::avx2::exp_moments(x, shift);
      CHECK(b.sum == doctest::Approx(a.sum).epsilon(1e-13));
      CHECK(b.sum_sq == doctest::Approx(a.sum_sq).epsilon(1e-13));
      std::vector<double> es(n), ev(n);
      kernels::scalar::exp_shifted(x, shift, es);
      kernels::avx2::exp_shifted(x, shift, ev);
      for (std::size_t i = 0; i < n; ++i) {
        const double tol = 1e-14 * std::abs(es[i]) + 1e-300;
        CHECK(std::abs(es[i] - ev[i]) <= tol);
      }
    }
    auto x = random_logs(n, 1.0, 1), x0 = random_logs(n, 1.0, 2), g = random_logs(n, 1.0, 3),
         z = random_logs(n, 1.0, 4);
    std::vector<double> os(n), ov(n);
    kernels::scalar::affine_combine(os, 0.9, x, 0.3, x0, 0.05, g, 0.2, z);
    kernels::avx2::affine_combine(ov, 0.9, x, 0.3, x0, 0.05, g, 0.2, z);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(os[i] - ov[i]) <= 1e-15 * (1 + std::abs(os[i])));
  }
}

TEST_CASE("avx2 exp at the edges of the range") {
  if (!kernels::avx2_available()) return;
  const std::vector<double> x{0.0, -700.0, -708.0, -709.0, -745.0, -800.0, 5.0, 700.0};
  std::vector<double> es(x.size()), ev(x.size());
  kernels::scalar::exp_shifted(x, 0.0, es);
  kernels::avx2::exp_shifted(x, 0.0, ev);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < -708.0) {
      CHECK(ev[i] <= 1e-307);  // flushed to zero or subnormal
    } else {
      CHECK(std::abs(es[i] - ev[i]) <= 1e-14 * es[i]);
    }
  }
}
#endif

TEST_CASE("dispatch follows the forced ISA") {
  IsaGuard guard;
  const auto x = random_logs(1001, 5.0, 9);
  kernels::force_isa(kernels::Isa::scalar);
  CHECK(kernels::active_isa() == kernels::Isa::scalar);
  const double a = kernels::log_sum_exp(x);
  kernels::force_isa(kernels::Isa::avx2);
  CHECK(kernels::active_isa() == (kernels::avx2_available() ? kernels::Isa::avx2 : kernels::Isa::scalar));
  const double b = kernels::log_sum_exp(x);
  CHECK(b == doctest::Approx(a).epsilon(1e-14));
  CHECK(std::string(kernels::isa_name(kernels::Isa::avx2)) == "avx2");
}

}  // TEST_SUITE
