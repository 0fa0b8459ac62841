#include <algorithm>
#include <cmath>
#include <limits>

#include "dalign/kernels/kernels.hpp"

namespace dalign::kernels::scalar {

double max_value(std::span<const double> x) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : x) hi = std::max(hi, v);
  return hi;
}

ExpMoments exp_moments(std::span<const double> x, double shift) {
  ExpMoments m;
  for (double v : x) {
    const double e = std::exp(v - shift);
    m.sum += e;
    m.sum_sq += e * e;
  }
  return m;
}

void exp_shifted(std::span<const double> x, double shift, std::span<double> out) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::exp(x[i] - shift);
}

void affine_combine(std::span<double> out, double cx, std::span<const double> x, double c0,
                    std::span<const double> x0, double cg, std::span<const double> g,
                    double sigma, std::span<const double> noise) {
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = cx * x[i] + c0 * x0[i] + cg * g[i] + sigma * noise[i];
}

}  // namespace dalign::kernels::scalar
