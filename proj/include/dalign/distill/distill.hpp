#pragma once

#include <cstdint>
#include <memory>
#include <ostream>
#include <unordered_map>
#include <vector>

#include "dalign/processes/masked.hpp"
#include "dalign/samplers/guidance.hpp"

namespace dalign {

/// Student policy for a masked process: one softmax row per visited
/// (t, state) over the pre-trained kernel's support (every combination of
/// per-position options, not only single-token moves). Rows that were never
/// touched behave exactly like the pre-trained kernel.
class TabularPolicy {
 public:
  struct Row {
    std::vector<std::int64_t> next;  // successor codes
    std::vector<double> logits;
    std::vector<double> probs() const;
  };

  explicit TabularPolicy(const MaskedProcess& process);

  const MaskedProcess& process() const { return *process_; }
  /// Row for (t, x), created from the pre-trained kernel on first access.
  Row& row(int t, const DiscreteSequence& x);
  const Row* find(int t, const DiscreteSequence& x) const;
  Row pretrained_row(int t, const DiscreteSequence& x) const;
  std::size_t row_count() const { return rows_.size(); }

  double logprob(const DiscreteSequence& next, const DiscreteSequence& x, int t) const;
  DiscreteSequence sample(const DiscreteSequence& x, int t, Rng& rng) const;

  /// Kernel over an immutable snapshot of the current rows.
  TransitionKernel<DiscreteSequence> kernel() const;

  /// Exact law of x0 when running this policy from the fully masked state.
  DistributionTable terminal_law() const;

  /// "t,state,next_state,prob" rows for every stored row, with header.
  void export_table(std::ostream& os) const;

  std::vector<std::pair<int, DiscreteSequence>> visited_cells() const;

 private:
  std::int64_t key(int t, const DiscreteSequence& x) const;

  const MaskedProcess* process_;
  std::unordered_map<std::int64_t, Row> rows_;
};

/// Soft-optimal row p_pre(x'|x) exp((v_{t-1}(x') - v_t(x)) / alpha), left
/// unnormalized (it sums to 1 when the values are exact).
TabularPolicy::Row soft_optimal_row(const MaskedProcess& process, const DiscreteValueModel& values,
                                    double alpha, int t, const DiscreteSequence& x);

struct Transition {
  int t = 0;                 // step taken from x_t to x_{t-1}
  DiscreteSequence x;        // x_t
  DiscreteSequence next;     // x_{t-1}
};

using Trajectory = std::vector<DiscreteSequence>;  // x_T, ..., x_0

enum class RollinKind { teacher, student, forward_recycle };

struct RollinSpec {
  RollinKind kind = RollinKind::teacher;
  double mix = 1.0;  // teacher fraction when mixing teacher and student
  std::vector<DiscreteSequence> dataset;  // clean states for forward_recycle
  int recycle_step = 0;  // fixed noising step for forward_recycle; 0 draws t uniformly
};

struct RollinState {
  int t = 0;
  DiscreteSequence x;
};

/// Trajectories of a kernel run from the fully masked state; trajectory i
/// uses the proposal streams of particle i.
std::vector<Trajectory> kernel_trajectories(const MaskedProcess& process,
                                            const TransitionKernel<DiscreteSequence>& kernel,
                                            std::size_t n, std::uint64_t seed);

/// States at which a distillation loss is evaluated. Teacher / student
/// kinds emit every (t, x_t), t >= 1, of n trajectories (trajectory i comes
/// from the teacher with probability mix); forward_recycle emits one x_t
/// per dataset element at a uniform (or fixed) step t via the forward process.
std::vector<RollinState> make_rollin(const RollinSpec& spec,
                                     const TransitionKernel<DiscreteSequence>& teacher,
                                     const TabularPolicy& student, const MaskedProcess& process,
                                     std::size_t n, std::uint64_t seed);

/// Every (t, x_t), t >= 1, reachable from the fully masked state under the
/// pre-trained kernel, ordered by decreasing t then code.
std::vector<RollinState> reachable_cells(const MaskedProcess& process);

/// Teacher transitions sampled at roll-in states.
std::vector<Transition> teacher_transitions(const std::vector<RollinState>& states,
                                            const TransitionKernel<DiscreteSequence>& teacher,
                                            std::uint64_t seed);
std::vector<Transition> trajectory_transitions(const std::vector<Trajectory>& trajectories);

/// One-step SVDD kernel (sampling only): M pre-trained candidates, one picked
/// with probability proportional to exp(v_{t-1}/alpha).
TransitionKernel<DiscreteSequence> svdd_step_kernel(const MaskedProcess& process,
                                                    const DiscreteValueModel& values, double alpha,
                                                    int M);

struct DistillStats {
  std::size_t visited_cells = 0;
  std::size_t transitions = 0;
};

/// Forward-KL (value-weighted MLE) distillation; the tabular optimum is the
/// per-cell empirical teacher frequency, smoothed by +1e-9 over the row
/// support. Cells without transitions keep their current row.
DistillStats distill_kl(const std::vector<Transition>& teacher, TabularPolicy& student);

/// Mean squared path-consistency residual
/// log p_theta - log p_pre - v_{t-1}(x')/alpha + v_t(x)/alpha.
double pcl_loss(const TabularPolicy& student, const DiscreteValueModel& values, double alpha,
                const std::vector<Transition>& batch);

/// Every (x_t, x_{t-1}) pair in the support of the given rows.
std::vector<Transition> support_batch(const TabularPolicy& student,
                                      const std::vector<RollinState>& cells);

struct OptimizeOptions {
  double lr = 0.5;
  int max_steps = 10000;
  double grad_tol = 1e-8;
};

struct OptimizeResult {
  int steps = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

/// Full-batch gradient descent on pcl_loss over the student logits.
OptimizeResult pcl_optimize(TabularPolicy& student, const DiscreteValueModel& values, double alpha,
                            const std::vector<Transition>& batch, const OptimizeOptions& opts);

/// One exact gradient step on the inverse KL E_p[log p - log p_pre -
/// v_{t-1}/alpha] + v_t/alpha for each roll-in cell. Returns the gradient
/// norm before the step. alpha = +inf drops the value terms.
double distill_inverse_kl_step(TabularPolicy& student, const DiscreteValueModel& values,
                               double alpha, const std::vector<RollinState>& cells, double lr);

/// Largest per-row TV between the student and the soft-optimal rows.
double max_row_tv_to_optimal(const TabularPolicy& student, const DiscreteValueModel& values,
                             double alpha, const std::vector<RollinState>& cells);

}  // namespace dalign
