#include "dalign/samplers/guidance.hpp"

namespace dalign {

void validate(const GuidanceConfig& cfg, bool allow_zero_alpha) {
  require(cfg.N >= 1, Errc::invalid_argument, "N must be >= 1");
  require(cfg.M >= 1, Errc::invalid_argument, "M must be >= 1");
  require(cfg.ess_threshold > 0.0 && cfg.ess_threshold <= 1.0, Errc::invalid_argument,
          "ess_threshold must lie in (0, 1]");
  if (allow_zero_alpha)
    require(cfg.alpha >= 0.0, Errc::invalid_argument, "alpha must be >= 0");
  else
    require(cfg.alpha > 0.0, Errc::invalid_argument,
            "alpha must be > 0 for weighted samplers (alpha = 0 is svdd/beam only)");
}

namespace detail {

std::vector<int> resample_indices(std::span<const double> log_weights, Resampling scheme, Rng& rng) {
  const std::size_t n = log_weights.size();
  const double hi = kernels::max_value(log_weights);
  require(std::isfinite(hi), Errc::degenerate_weights, "all weights vanished");
  std::vector<double> cdf(n);
  kernels::exp_shifted(log_weights, hi, cdf);
  for (std::size_t i = 1; i < n; ++i) cdf[i] += cdf[i - 1];
  const double total = cdf.back();
  std::vector<int> out(n);
  auto locate = [&](double u) {
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u * total);
    return static_cast<int>(std::min<std::size_t>(it - cdf.begin(), n - 1));
  };
  if (scheme == Resampling::systematic) {
    const double u0 = uniform01(rng) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = locate(u0 + static_cast<double>(i) / n);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = locate(uniform01(rng));
  }
  return out;
}

int argmax_lowest(std::span<const double> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = static_cast<int>(i);
  return best;
}

}  // namespace detail
}  // namespace dalign
