#pragma once

#include <string>
#include <vector>

namespace dalign {

enum class ScheduleKind { linear, cosine };

/// Retention factors indexed t = 0..T; entries at t = 0 are the boundary
/// values alpha = 1, alpha_bar = 1, sigma2 = 0.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> sigma2;
  double dt = 0.0;

  /// Builds alpha and sigma2 from a cumulative sequence alpha_bar[1..T]
  /// (alpha_bar[0] is forced to 1). Validates the invariants.
  static NoiseSchedule from_alpha_bar(std::vector<double> alpha_bar);
};

inline constexpr double kScheduleEps = 1e-4;

NoiseSchedule make_schedule(ScheduleKind kind, int T);

ScheduleKind parse_schedule_kind(const std::string& name);

}  // namespace dalign
