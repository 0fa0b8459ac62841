#include "dalign/values/value_model.hpp"

#include "dalign/core/error.hpp"

namespace dalign {

const char* value_kind_name(ValueKind kind) {
  switch (kind) {
    case ValueKind::exact: return "exact";
    case ValueKind::posterior_mean: return "posterior_mean";
    case ValueKind::mc_regression: return "mc_regression";
    case ValueKind::fqi: return "fqi";
    case ValueKind::closed_form: return "closed_form";
  }
  return "unknown";
}

double relaxed_by_enumeration(const DiscreteValueModel& v, int t, const Eigen::MatrixXd& probs) {
  const int L = static_cast<int>(probs.rows());
  const int base = static_cast<int>(probs.cols());
  require(base >= 2, Errc::invalid_argument, "relaxed input needs K+1 columns");
  const int K = base - 1;
  const std::int64_t n = state_count(K, L);
  double total = 0.0;
  for (std::int64_t code = 0; code < n; ++code) {
    std::int64_t rem = code;
    double w = 1.0;
    for (int l = L - 1; l >= 0 && w != 0.0; --l) {
      w *= probs(l, static_cast<int>(rem % base));
      rem /= base;
    }
    if (w == 0.0) continue;
    total += w * v.eval(t, decode_state(code, K, L));
  }
  return total;
}

Eigen::VectorXd value_gradient(const ContinuousValueModel& v, int t, const Eigen::VectorXd& x,
                               double h) {
  require(v.differentiable, Errc::unsupported_value_model,
          "value model does not support gradients");
  if (v.gradient) return v.gradient(t, x);
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x, xm = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    xm[i] = x[i] - h;
    g[i] = (v.eval(t, xp) - v.eval(t, xm)) / (2.0 * h);
    xp[i] = xm[i] = x[i];
  }
  return g;
}

}  // namespace dalign
