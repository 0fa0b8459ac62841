#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <span>

namespace dalign {

/// xoshiro256** generator. Satisfies UniformRandomBitGenerator so the
/// <random> distributions can draw from it.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) noexcept;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
};

/// Purpose tags keep the streams of distinct random decisions disjoint.
enum class Stream : std::uint64_t {
  proposal = 1,
  select = 2,
  resample = 3,
  noise = 4,
  rollout = 5,
  tree = 6,
  forward = 7,
  misc = 8,
};

/// Counter-based stream derivation: the generator for a decision depends only
/// on (seed, purpose, a, b, c), never on evaluation order or thread layout.
Rng make_stream(std::uint64_t seed, Stream purpose, std::uint64_t a = 0, std::uint64_t b = 0,
                std::uint64_t c = 0) noexcept;

double uniform01(Rng& rng);
double standard_normal(Rng& rng);

/// Inverse-CDF draw from unnormalized non-negative weights.
std::size_t sample_categorical(std::span<const double> weights, Rng& rng);

/// Inverse-CDF draw from log-weights (max-shifted internally).
std::size_t sample_log_categorical(std::span<const double> log_weights, Rng& rng);

}  // namespace dalign
