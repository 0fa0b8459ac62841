#include <atomic>
#include <cmath>
#include <limits>

#include "dalign/kernels/kernels.hpp"

namespace dalign::kernels {
namespace {

Isa detect() {
#if defined(DALIGN_HAVE_AVX2)
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::avx2;
#endif
  return Isa::scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

Isa active_isa() { return current().load(std::memory_order_relaxed); }

bool avx2_available() { return detect() == Isa::avx2; }

void force_isa(Isa isa) {
  if (isa == Isa::avx2 && !avx2_available()) return;
  current().store(isa, std::memory_order_relaxed);
}

const char* isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

#if defined(DALIGN_HAVE_AVX2)
#define DALIGN_DISPATCH(fn, ...) \
  (active_isa() == Isa::avx2 ? avx2::fn(__VA_ARGS__) : scalar::fn(__VA_ARGS__))
#else
#define DALIGN_DISPATCH(fn, ...) scalar::fn(__VA_ARGS__)
#endif

double max_value(std::span<const double> x) { return DALIGN_DISPATCH(max_value, x); }

ExpMoments exp_moments(std::span<const double> x, double shift) {
  return DALIGN_DISPATCH(exp_moments, x, shift);
}

void exp_shifted(std::span<const double> x, double shift, std::span<double> out) {
  DALIGN_DISPATCH(exp_shifted, x, shift, out);
}

void affine_combine(std::span<double> out, double cx, std::span<const double> x, double c0,
                    std::span<const double> x0, double cg, std::span<const double> g,
                    double sigma, std::span<const double> noise) {
  DALIGN_DISPATCH(affine_combine, out, cx, x, c0, x0, cg, g, sigma, noise);
}

double log_sum_exp(std::span<const double> x) {
  const double hi = max_value(x);
  if (!std::isfinite(hi)) return hi;
  return hi + std::log(exp_moments(x, hi).sum);
}

}  // namespace dalign::kernels
