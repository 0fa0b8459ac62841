#pragma once

#include <Eigen/Dense>
#include <functional>

#include "dalign/processes/discrete.hpp"
#include "dalign/processes/gaussian.hpp"

namespace dalign {

enum class ValueKind { exact, posterior_mean, mc_regression, fqi, closed_form };

const char* value_kind_name(ValueKind kind);

/// Soft value v_t(x) in natural units. Samplers divide by alpha themselves.
template <class S>
struct ValueModel {
  ValueKind kind = ValueKind::exact;
  std::function<double(int, const S&)> eval;
  /// Simplex-input evaluation, L x (K+1) rows (sequence values only).
  std::function<double(int, const Eigen::MatrixXd&)> relaxed;
  /// Analytic gradient (vector values only); empty means finite differences.
  std::function<Eigen::VectorXd(int, const Eigen::VectorXd&)> gradient;
  bool differentiable = true;

  double operator()(int t, const S& x) const { return eval(t, x); }
};

using DiscreteValueModel = ValueModel<DiscreteSequence>;
using ContinuousValueModel = ValueModel<ContinuousState>;

/// A value model that ignores its input; reduces every guided sampler to
/// the pre-trained law.
template <class S>
ValueModel<S> constant_value(double c) {
  ValueModel<S> v;
  v.kind = ValueKind::closed_form;
  v.eval = [c](int, const S&) { return c; };
  if constexpr (std::is_same_v<S, DiscreteSequence>)
    v.relaxed = [c](int, const Eigen::MatrixXd&) { return c; };
  if constexpr (std::is_same_v<S, ContinuousState>)
    v.gradient = [](int, const Eigen::VectorXd& x) { return Eigen::VectorXd::Zero(x.size()); };
  return v;
}

/// Multilinear extension over all (K+1)^L one-hot vertices of a sequence
/// value model: sum_x prod_l P[l, x_l] v_t(x).
double relaxed_by_enumeration(const DiscreteValueModel& v, int t, const Eigen::MatrixXd& probs);

/// Central finite-difference gradient of a vector value model.
Eigen::VectorXd value_gradient(const ContinuousValueModel& v, int t, const Eigen::VectorXd& x,
                               double h = 1e-4);

}  // namespace dalign
