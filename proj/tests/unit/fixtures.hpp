#pragma once

#include <cmath>
#include <vector>

#include "dalign/processes/masked.hpp"
#include "dalign/rewards/reward.hpp"

namespace fixtures {

// K = 2, L = 2, T = 8 masked instance shared by the sampler tests.
inline dalign::DistributionTable tiny_data() {
  return dalign::DistributionTable::from_entries(
      2, 2, {{"AA", 0.4}, {"AB", 0.1}, {"BA", 0.2}, {"BB", 0.3}});
}

inline dalign::RewardModel tiny_reward() {
  return dalign::RewardModel::table(2, 2, {{"AA", 0.0}, {"AB", 0.5}, {"BA", 0.25}, {"BB", 1.0}});
}

inline dalign::MaskedProcess tiny_process(int T = 8) {
  return dalign::MaskedProcess(tiny_data(),
                               dalign::make_schedule(dalign::ScheduleKind::linear, T));
}

// Tilted law computed directly from a base law and a reward table.
inline std::vector<double> tilt(const std::vector<double>& base, const std::vector<double>& r,
                                double alpha) {
  std::vector<double> out(base.size());
  double z = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) z += out[i] = base[i] * std::exp(r[i] / alpha);
  for (double& v : out) v /= z;
  return out;
}

inline double tv(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return 0.5 * s;
}

}  // namespace fixtures
