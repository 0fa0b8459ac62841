#pragma once

#include <cstddef>
#include <span>

namespace dalign::kernels {

enum class Isa { scalar, avx2 };

struct ExpMoments {
  double sum = 0.0;     // sum of exp(x - shift)
  double sum_sq = 0.0;  // sum of exp(2 (x - shift))
};

/// ISA picked at first use: AVX2 when the build has it and the CPU reports it.
Isa active_isa();
bool avx2_available();
/// Overrides dispatch (tests use this to compare variants). Requesting avx2
/// on a machine without it is ignored.
void force_isa(Isa isa);
const char* isa_name(Isa isa);

double max_value(std::span<const double> x);
ExpMoments exp_moments(std::span<const double> x, double shift);
void exp_shifted(std::span<const double> x, double shift, std::span<double> out);
/// out = cx*x + c0*x0 + cg*g + sigma*noise, elementwise.
void affine_combine(std::span<double> out, double cx, std::span<const double> x, double c0,
                    std::span<const double> x0, double cg, std::span<const double> g,
                    double sigma, std::span<const double> noise);

/// log(sum exp(x)); -inf for empty input or all -inf entries.
double log_sum_exp(std::span<const double> x);

namespace scalar {
double max_value(std::span<const double> x);
ExpMoments exp_moments(std::span<const double> x, double shift);
void exp_shifted(std::span<const double> x, double shift, std::span<double> out);
void affine_combine(std::span<double> out, double cx, std::span<const double> x, double c0,
                    std::span<const double> x0, double cg, std::span<const double> g,
                    double sigma, std::span<const double> noise);
}  // namespace scalar

#if defined(DALIGN_HAVE_AVX2)
namespace avx2 {
double max_value(std::span<const double> x);
ExpMoments exp_moments(std::span<const double> x, double shift);
void exp_shifted(std::span<const double> x, double shift, std::span<double> out);
void affine_combine(std::span<double> out, double cx, std::span<const double> x, double c0,
                    std::span<const double> x0, double cg, std::span<const double> g,
                    double sigma, std::span<const double> noise);
}  // namespace avx2
#endif

}  // namespace dalign::kernels
