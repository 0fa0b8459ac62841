#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "dalign/kernels/kernels.hpp"

namespace dalign::kernels::avx2 {
namespace {

// exp(x) for x <= 0 via x = n*ln2 + r, |r| <= ln2/2, and a degree-12 Taylor
// polynomial for exp(r). Inputs below -708 flush to zero.
inline __m256d exp_nonpositive(__m256d x) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634);
  const __m256d ln2_hi = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d ln2_lo = _mm256_set1_pd(1.42860682030941723212e-6);
  const __m256d floor_x = _mm256_set1_pd(-708.0);

  const __m256d underflow = _mm256_cmp_pd(x, floor_x, _CMP_LT_OQ);
  x = _mm256_max_pd(x, floor_x);

  const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, log2e),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, ln2_hi, x);
  r = _mm256_fnmadd_pd(n, ln2_lo, r);

  static constexpr double inv_fact[13] = {
      1.0,
      1.0,
      1.0 / 2,
      1.0 / 6,
      1.0 / 24,
      1.0 / 120,
      1.0 / 720,
      1.0 / 5040,
      1.0 / 40320,
      1.0 / 362880,
      1.0 / 3628800,
      1.0 / 39916800,
      1.0 / 479001600,
  };
  __m256d p = _mm256_set1_pd(inv_fact[12]);
  for (int k = 11; k >= 0; --k) p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(inv_fact[k]));

  // 2^n by writing the biased exponent directly; n >= -1022 after the clamp.
  const __m128i n32 = _mm256_cvtpd_epi32(n);
  __m256i bits = _mm256_cvtepi32_epi64(n32);
  bits = _mm256_add_epi64(bits, _mm256_set1_epi64x(1023));
  bits = _mm256_slli_epi64(bits, 52);
  const __m256d scale = _mm256_castsi256_pd(bits);

  const __m256d result = _mm256_mul_pd(p, scale);
  return _mm256_andnot_pd(underflow, result);
}

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline double scalar_exp(double v) { return v < -708.0 ? 0.0 : std::exp(v); }

}  // namespace

double max_value(std::span<const double> x) {
  const std::size_t n = x.size();
  std::size_t i = 0;
  double hi = -std::numeric_limits<double>::infinity();
  if (n >= 4) {
    __m256d acc = _mm256_set1_pd(hi);
    for (; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(x.data() + i));
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc);
    hi = std::max(std::max(lanes[0], lanes[1]), std::max(lanes[2], lanes[3]));
  }
  for (; i < n; ++i) hi = std::max(hi, x[i]);
  return hi;
}

ExpMoments exp_moments(std::span<const double> x, double shift) {
  const std::size_t n = x.size();
  const __m256d s = _mm256_set1_pd(shift);
  __m256d acc1 = _mm256_setzero_pd();
  __m256d acc2 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d e = exp_nonpositive(_mm256_sub_pd(_mm256_loadu_pd(x.data() + i), s));
    acc1 = _mm256_add_pd(acc1, e);
    acc2 = _mm256_fmadd_pd(e, e, acc2);
  }
  ExpMoments m{hsum(acc1), hsum(acc2)};
  for (; i < n; ++i) {
    const double e = scalar_exp(x[i] - shift);
    m.sum += e;
    m.sum_sq += e * e;
  }
  return m;
}

void exp_shifted(std::span<const double> x, double shift, std::span<double> out) {
  const std::size_t n = x.size();
  const __m256d s = _mm256_set1_pd(shift);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out.data() + i,
                     exp_nonpositive(_mm256_sub_pd(_mm256_loadu_pd(x.data() + i), s)));
  for (; i < n; ++i) out[i] = scalar_exp(x[i] - shift);
}

void affine_combine(std::span<double> out, double cx, std::span<const double> x, double c0,
                    std::span<const double> x0, double cg, std::span<const double> g,
                    double sigma, std::span<const double> noise) {
  const std::size_t n = out.size();
  const __m256d vcx = _mm256_set1_pd(cx);
  const __m256d vc0 = _mm256_set1_pd(c0);
  const __m256d vcg = _mm256_set1_pd(cg);
  const __m256d vs = _mm256_set1_pd(sigma);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d acc = _mm256_mul_pd(vcx, _mm256_loadu_pd(x.data() + i));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(vc0, _mm256_loadu_pd(x0.data() + i)));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(vcg, _mm256_loadu_pd(g.data() + i)));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(vs, _mm256_loadu_pd(noise.data() + i)));
    _mm256_storeu_pd(out.data() + i, acc);
  }
  for (; i < n; ++i) out[i] = cx * x[i] + c0 * x0[i] + cg * g[i] + sigma * noise[i];
}

}  // namespace dalign::kernels::avx2
