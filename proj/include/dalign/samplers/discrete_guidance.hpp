#pragma once

#include <memory>

#include "dalign/processes/masked.hpp"
#include "dalign/samplers/guidance.hpp"

namespace dalign {

enum class DiscreteGuidanceMode { exact, taylor };

/// Guided one-step rows for a masked state. Each masked position l moves to
/// token k with probability p_pre(l,k) * factor(l,k); exact mode uses
/// factor = exp((v_{t-1}(x^{l->k}) - v_{t-1}(x)) / alpha), Taylor mode uses
/// max(0, 1 + (dV/dP[l,k] - dV/dP[l,MASK]) / alpha) from the relaxed value.
/// The stay probability is the complement; when it is negative, or when the
/// pre-trained step forces unmasking, the move row is renormalized.
StepRows guided_step_rows(const MaskedProcess& process, const DiscreteValueModel& values,
                          double alpha, const DiscreteSequence& x, int t,
                          DiscreteGuidanceMode mode);

/// Rate comparison helper: per masked position and token, the guided rate
/// multiplier used by the chosen mode (before clamping).
Eigen::MatrixXd guidance_factors(const MaskedProcess& process, const DiscreteValueModel& values,
                                 double alpha, const DiscreteSequence& x, int t,
                                 DiscreteGuidanceMode mode);

/// Guided masked kernel with rows memoized per (t, state).
TransitionKernel<DiscreteSequence> guided_discrete_kernel(const MaskedProcess& process,
                                                          const DiscreteValueModel& values,
                                                          double alpha, DiscreteGuidanceMode mode);

SamplerReport<DiscreteSequence> discrete_guidance_exact(
    const MaskedProcess& process, const DiscreteValueModel& values, const RewardModel& r,
    const GuidanceConfig& cfg,
    const std::optional<SamplerStart<DiscreteSequence>>& start = {});

SamplerReport<DiscreteSequence> discrete_guidance_taylor(
    const MaskedProcess& process, const DiscreteValueModel& values, const RewardModel& r,
    const GuidanceConfig& cfg,
    const std::optional<SamplerStart<DiscreteSequence>>& start = {});

/// Exact x0 law of per-step rows run from the fully masked state.
DistributionTable rows_terminal_law(
    const MaskedProcess& process,
    const std::function<StepRows(const DiscreteSequence&, int)>& rows);

}  // namespace dalign
