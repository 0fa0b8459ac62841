#include "dalign/processes/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dalign/core/error.hpp"

namespace dalign {

NoiseSchedule NoiseSchedule::from_alpha_bar(std::vector<double> alpha_bar) {
  require(alpha_bar.size() >= 2, Errc::invalid_argument, "schedule needs T >= 1");
  NoiseSchedule s;
  s.T = static_cast<int>(alpha_bar.size()) - 1;
  s.dt = 1.0 / s.T;
  alpha_bar[0] = 1.0;
  s.alpha.assign(alpha_bar.size(), 1.0);
  s.sigma2.assign(alpha_bar.size(), 0.0);
  for (int t = 1; t <= s.T; ++t) {
    require(alpha_bar[t] > 0.0 && alpha_bar[t] <= alpha_bar[t - 1], Errc::invalid_argument,
            "alpha_bar must be positive and non-increasing");
    s.alpha[t] = alpha_bar[t] / alpha_bar[t - 1];
    if (alpha_bar[t] < 1.0)
      s.sigma2[t] = (1.0 - s.alpha[t]) * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]);
  }
  s.alpha_bar = std::move(alpha_bar);
  return s;
}

NoiseSchedule make_schedule(ScheduleKind kind, int T) {
  require(T >= 1, Errc::invalid_argument, "schedule step count must be >= 1");
  std::vector<double> ab(T + 1, 1.0);
  const double eps = kScheduleEps;
  if (kind == ScheduleKind::linear) {
    for (int t = 1; t <= T; ++t)
      ab[t] = (1.0 - eps) - (1.0 - 2.0 * eps) * static_cast<double>(t) / T;
  } else {
    const double s = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / T + s) / (1.0 + s) * std::numbers::pi / 2.0);
      return c * c;
    };
    const double f0 = f(0.0);
    for (int t = 1; t <= T; ++t) ab[t] = std::clamp(f(t) / f0, eps, 1.0);
    // Clipping at 1 can produce flat steps; keep alpha_bar strictly below 1
    // after t = 0 so every step carries noise.
    for (int t = 1; t <= T; ++t) ab[t] = std::min(ab[t], 1.0 - eps);
  }
  return NoiseSchedule::from_alpha_bar(std::move(ab));
}

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "linear") return ScheduleKind::linear;
  if (name == "cosine") return ScheduleKind::cosine;
  throw Error(Errc::validation, "unknown schedule kind '" + name + "'");
}

}  // namespace dalign
