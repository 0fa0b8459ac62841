#include "dalign/core/random.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dalign/core/error.hpp"

namespace dalign {
namespace {

std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) noexcept {
  std::uint64_t s = h ^ (v + 0x632BE59BD9B4E019ull + (h << 6) + (h >> 2));
  return splitmix64(s);
}

}  // namespace

Rng::Rng(std::uint64_t seed) noexcept {
  std::uint64_t state = seed;
  for (auto& word : s_) word = splitmix64(state);
}

Rng make_stream(std::uint64_t seed, Stream purpose, std::uint64_t a, std::uint64_t b,
                std::uint64_t c) noexcept {
  std::uint64_t h = mix(seed, static_cast<std::uint64_t>(purpose));
  h = mix(h, a);
  h = mix(h, b);
  h = mix(h, c);
  return Rng(h);
}

double uniform01(Rng& rng) {
  // 53 random mantissa bits, in [0, 1).
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist;
  return dist(rng);
}

std::size_t sample_categorical(std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  require(total > 0.0 && std::isfinite(total), Errc::degenerate_weights,
          "categorical weights sum to zero");
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  // Rounding can leave u == total; fall back to the last positive entry.
  for (std::size_t i = weights.size(); i-- > 0;)
    if (weights[i] > 0.0) return i;
  return weights.size() - 1;
}

std::size_t sample_log_categorical(std::span<const double> log_weights, Rng& rng) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double lw : log_weights) hi = std::max(hi, lw);
  require(std::isfinite(hi), Errc::degenerate_weights, "all log-weights are -inf");
  std::vector<double> w(log_weights.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_weights[i] - hi);
  return sample_categorical(w, rng);
}

}  // namespace dalign
