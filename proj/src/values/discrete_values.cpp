#include "dalign/values/discrete_values.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dalign/core/error.hpp"
#include "dalign/core/parallel.hpp"
#include "dalign/kernels/kernels.hpp"

namespace dalign {
namespace {

constexpr double kRegressionFloor = 1e-12;

void check_alpha(double alpha) {
  require(alpha > 0.0 && std::isfinite(alpha), Errc::invalid_argument,
          "soft values need alpha > 0");
}

/// Forced-unmask rows: masked positions draw from the denoiser marginals.
StepRows completion_rows(const MaskedProcess& model, const DiscreteSequence& x) {
  const Eigen::MatrixXd probs = model.denoise(x);
  StepRows rows = StepRows::Zero(x.length(), x.K + 1);
  for (int l = 0; l < x.length(); ++l) {
    if (x.is_masked(l))
      rows.row(l).head(x.K) = probs.row(l);
    else
      rows(l, x.tokens[l]) = 1.0;
  }
  return rows;
}

double soft_log_mean(std::vector<double>& terms) { return kernels::log_sum_exp(terms); }

}  // namespace

ExactDiscreteValues::ExactDiscreteValues(const MaskedProcess& model, const RewardModel& r,
                                         double alpha)
    : K_(model.K()), L_(model.L()), alpha_(alpha) {
  check_alpha(alpha);
  const int T = model.horizon();
  const std::int64_t n = model.num_states();
  const auto rewards = r.table_values(K_, L_);
  v_.assign(T + 1, std::vector<double>(n, 0.0));

  // Clean codes in base K+1 -> reward; masked codes -> forced completion.
  auto clean_reward = [&](std::int64_t code) {
    std::int64_t idx = 0, mul = 1;
    for (int l = 0; l < L_; ++l) {
      idx += (code % (K_ + 1)) * mul;
      code /= (K_ + 1);
      mul *= K_;
    }
    return rewards[idx];
  };
  std::vector<double> terms;
  for (std::int64_t code = 0; code < n; ++code) {
    const auto x = decode_state(code, K_, L_);
    if (x.masked_count() == 0) {
      v_[0][code] = clean_reward(code);
      continue;
    }
    terms.clear();
    MaskedProcess::for_each_successor(x, completion_rows(model, x), [&](std::int64_t c, double p) {
      terms.push_back(std::log(p) + clean_reward(c) / alpha_);
    });
    v_[0][code] = alpha_ * soft_log_mean(terms);
  }
  for (int t = 1; t <= T; ++t) {
    for (std::int64_t code = 0; code < n; ++code) {
      const auto x = decode_state(code, K_, L_);
      if (x.masked_count() == 0) {
        v_[t][code] = v_[0][code];
        continue;
      }
      terms.clear();
      MaskedProcess::for_each_successor(x, model.step_rows(x, t), [&](std::int64_t c, double p) {
        terms.push_back(std::log(p) + v_[t - 1][c] / alpha_);
      });
      v_[t][code] = alpha_ * soft_log_mean(terms);
    }
  }
}

double ExactDiscreteValues::value(int t, const DiscreteSequence& x) const {
  require(t >= 0 && t < static_cast<int>(v_.size()), Errc::invalid_argument,
          "value step index out of range");
  require(x.K == K_ && x.length() == L_, Errc::invalid_argument, "sequence shape mismatch");
  return v_[t][encode_state(x)];
}

DiscreteValueModel ExactDiscreteValues::model() const {
  auto self = std::make_shared<const ExactDiscreteValues>(*this);
  DiscreteValueModel m;
  m.kind = ValueKind::exact;
  m.eval = [self](int t, const DiscreteSequence& x) { return self->value(t, x); };
  m.relaxed = [self](int t, const Eigen::MatrixXd& probs) {
    const int base = self->K_ + 1;
    const auto& layer = self->v_[t];
    double total = 0.0;
    for (std::int64_t code = 0; code < static_cast<std::int64_t>(layer.size()); ++code) {
      std::int64_t rem = code;
      double w = 1.0;
      for (int l = self->L_ - 1; l >= 0 && w != 0.0; --l) {
        w *= probs(l, static_cast<int>(rem % base));
        rem /= base;
      }
      total += w * layer[code];
    }
    return total;
  };
  return m;
}

double exact_value_discrete(const MaskedProcess& model, const RewardModel& r, double alpha, int t,
                            const DiscreteSequence& x) {
  return ExactDiscreteValues(model, r, alpha).value(t, x);
}

double direct_value_discrete(const MaskedProcess& model, const RewardModel& r, double alpha, int t,
                             const DiscreteSequence& x) {
  check_alpha(alpha);
  const std::int64_t n = model.num_states();
  std::vector<double> cur(n, 0.0), next(n, 0.0);
  cur[encode_state(x)] = 1.0;
  for (int s = t; s >= 1; --s) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::int64_t code = 0; code < n; ++code) {
      if (cur[code] == 0.0) continue;
      const double mass = cur[code];
      const auto y = decode_state(code, model.K(), model.L());
      MaskedProcess::for_each_successor(y, model.step_rows(y, s),
                                        [&](std::int64_t c, double p) { next[c] += mass * p; });
    }
    std::swap(cur, next);
  }
  std::vector<double> terms;
  for (std::int64_t code = 0; code < n; ++code) {
    if (cur[code] == 0.0) continue;
    const auto y = decode_state(code, model.K(), model.L());
    if (y.masked_count() == 0) {
      terms.push_back(std::log(cur[code]) + r.eval(y) / alpha);
      continue;
    }
    const double base = std::log(cur[code]);
    MaskedProcess::for_each_successor(y, completion_rows(model, y), [&](std::int64_t c, double p) {
      terms.push_back(base + std::log(p) + r.eval(decode_state(c, model.K(), model.L())) / alpha);
    });
  }
  return alpha * kernels::log_sum_exp(terms);
}

double posterior_mean_value(const MaskedProcess& model, const RewardModel& r, int t,
                            const DiscreteSequence& x) {
  require(t >= 0 && t <= model.horizon(), Errc::invalid_argument, "step index out of range");
  if (x.masked_count() == 0) return r.eval(x);
  return r.extension(model.denoise(x));
}

DiscreteValueModel posterior_mean_model(const MaskedProcess& model, const RewardModel& r) {
  DiscreteValueModel m;
  m.kind = ValueKind::posterior_mean;
  const MaskedProcess* pm = &model;
  const RewardModel* pr = &r;
  m.eval = [pm, pr](int t, const DiscreteSequence& x) { return posterior_mean_value(*pm, *pr, t, x); };
  m.relaxed = [m](int t, const Eigen::MatrixXd& probs) {
    return relaxed_by_enumeration(m, t, probs);
  };
  return m;
}

// ---------------------------------------------------------------------------
// Fitted values

FittedDiscreteValues::FittedDiscreteValues(const MaskedProcess& model, const RewardModel& r,
                                           double alpha, ValueKind kind)
    : model_(&model),
      reward_(&r),
      alpha_(alpha),
      kind_(kind),
      cells_(model.horizon() + 1),
      fallbacks_(std::make_shared<std::atomic<std::int64_t>>(0)) {}

bool FittedDiscreteValues::has_cell(int t, std::int64_t code) const {
  return cells_[t].count(code) > 0;
}

std::int64_t FittedDiscreteValues::cell_count() const {
  std::int64_t n = 0;
  for (const auto& layer : cells_) n += static_cast<std::int64_t>(layer.size());
  return n;
}

double FittedDiscreteValues::value(int t, const DiscreteSequence& x) const {
  require(t >= 0 && t < static_cast<int>(cells_.size()), Errc::invalid_argument,
          "value step index out of range");
  if (features_) {
    const Eigen::VectorXd phi = features_(t, x);
    const double fit = phi.dot(coef_[t]);
    if (space_ == FitSpace::log_space) return fit;
    if (fit <= 0.0) return alpha_ * std::log(kRegressionFloor);
    return alpha_ * std::max(std::log(fit) + shift_[t], std::log(kRegressionFloor));
  }
  const auto it = cells_[t].find(encode_state(x));
  if (it != cells_[t].end()) return it->second;
  fallbacks_->fetch_add(1);
  return posterior_mean_value(*model_, *reward_, t, x);
}

void FittedDiscreteValues::export_table(std::ostream& os) const {
  os << "t,state,v\n";
  for (std::size_t t = 0; t < cells_.size(); ++t) {
    std::vector<std::pair<std::int64_t, double>> rows(cells_[t].begin(), cells_[t].end());
    std::sort(rows.begin(), rows.end());
    for (const auto& [code, v] : rows)
      os << t << ',' << decode_state(code, model_->K(), model_->L()).str() << ',' << v << '\n';
  }
}

DiscreteValueModel FittedDiscreteValues::model() const {
  auto self = std::make_shared<const FittedDiscreteValues>(*this);
  DiscreteValueModel m;
  m.kind = kind_;
  m.eval = [self](int t, const DiscreteSequence& x) { return self->value(t, x); };
  m.relaxed = [m](int t, const Eigen::MatrixXd& probs) {
    return relaxed_by_enumeration(m, t, probs);
  };
  return m;
}

namespace {

/// Pre-trained trajectories as state codes, traj[s][t] for t = 0..T.
std::vector<std::vector<std::int64_t>> collect_rollouts(const MaskedProcess& model,
                                                        const FitOptions& opts) {
  require(opts.rollouts >= 1, Errc::invalid_argument, "need at least one rollout");
  const int T = model.horizon();
  std::vector<std::vector<std::int64_t>> traj(opts.rollouts, std::vector<std::int64_t>(T + 1));
  parallel_for(static_cast<std::size_t>(opts.rollouts), opts.threads, [&](std::size_t s) {
    Rng rng = make_stream(opts.seed, Stream::rollout, s);
    auto x = model.sample_initial(rng);
    traj[s][T] = encode_state(x);
    for (int t = T; t >= 1; --t) {
      x = model.sample_step(x, t, rng);
      traj[s][t - 1] = encode_state(x);
    }
  });
  return traj;
}

/// Running log-mean accumulator for exp-space cell means.
struct LogMean {
  double hi = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  double plain = 0.0;  // for log-space fits
  std::int64_t n = 0;

  void add(double log_value, double value) {
    if (log_value > hi) {
      sum = sum * std::exp(hi - log_value) + 1.0;
      hi = log_value;
    } else {
      sum += std::exp(log_value - hi);
    }
    plain += value;
    ++n;
  }
  double log_mean() const { return hi + std::log(sum / static_cast<double>(n)); }
};

/// Fits one layer t from (code_t, target) samples where target is the value
/// f (natural units) of the regressand exp(f / alpha).
void fit_layer(FittedDiscreteValues& out, std::unordered_map<std::int64_t, double>& cells,
               const std::vector<std::int64_t>& codes, const std::vector<double>& targets,
               double alpha, FitSpace space) {
  std::unordered_map<std::int64_t, LogMean> acc;
  for (std::size_t i = 0; i < codes.size(); ++i)
    acc[codes[i]].add(targets[i] / alpha, targets[i]);
  cells.clear();
  for (const auto& [code, m] : acc) {
    if (space == FitSpace::log_space) {
      cells[code] = m.plain / static_cast<double>(m.n);
    } else {
      cells[code] = alpha * std::max(m.log_mean(), std::log(kRegressionFloor));
    }
  }
  (void)out;
}

/// Per-t least squares of the (shifted) regressand on custom features.
void fit_features(const FeatureMap& features, int t, const MaskedProcess& model,
                  const std::vector<std::int64_t>& codes, const std::vector<double>& targets,
                  double alpha, FitSpace space, Eigen::VectorXd& coef, double& shift) {
  const std::size_t n = codes.size();
  const Eigen::VectorXd phi0 = features(t, decode_state(codes[0], model.K(), model.L()));
  Eigen::MatrixXd X(n, phi0.size());
  Eigen::VectorXd y(n);
  shift = -std::numeric_limits<double>::infinity();
  for (double f : targets) shift = std::max(shift, f / alpha);
  for (std::size_t i = 0; i < n; ++i) {
    X.row(i) = features(t, decode_state(codes[i], model.K(), model.L())).transpose();
    y[i] = space == FitSpace::log_space ? targets[i] : std::exp(targets[i] / alpha - shift);
  }
  coef = X.completeOrthogonalDecomposition().solve(y);
}

}  // namespace

FittedDiscreteValues mc_regression_fit(const MaskedProcess& model, const RewardModel& r,
                                       double alpha, const FitOptions& opts) {
  check_alpha(alpha);
  FittedDiscreteValues out(model, r, alpha, ValueKind::mc_regression);
  out.space_ = opts.space;
  out.features_ = opts.features;
  const int T = model.horizon();
  const auto traj = collect_rollouts(model, opts);
  std::vector<double> rewards(traj.size());
  for (std::size_t s = 0; s < traj.size(); ++s)
    rewards[s] = r.eval(decode_state(traj[s][0], model.K(), model.L()));
  std::vector<std::int64_t> codes(traj.size());
  out.coef_.resize(T + 1);
  out.shift_.assign(T + 1, 0.0);
  for (int t = 0; t <= T; ++t) {
    for (std::size_t s = 0; s < traj.size(); ++s) codes[s] = traj[s][t];
    if (opts.features)
      fit_features(opts.features, t, model, codes, rewards, alpha, opts.space, out.coef_[t],
                   out.shift_[t]);
    else
      fit_layer(out, out.cells_[t], codes, rewards, alpha, opts.space);
  }
  return out;
}

FittedDiscreteValues soft_q_fit(const MaskedProcess& model, const RewardModel& r, double alpha,
                                const FitOptions& opts) {
  check_alpha(alpha);
  require(opts.iterations >= 1, Errc::invalid_argument, "soft Q-learning needs J >= 1");
  FittedDiscreteValues out(model, r, alpha, ValueKind::fqi);
  out.space_ = opts.space;
  out.features_ = opts.features;
  const int T = model.horizon();
  const auto traj = collect_rollouts(model, opts);
  const std::size_t S = traj.size();
  out.coef_.resize(T + 1);
  out.shift_.assign(T + 1, 0.0);

  // f[t][s]: current iterate evaluated on sample s at step t.
  std::vector<std::vector<double>> f(T + 1, std::vector<double>(S));
  for (std::size_t s = 0; s < S; ++s) {
    for (int t = 0; t <= T; ++t) {
      const auto x = decode_state(traj[s][t], model.K(), model.L());
      f[t][s] = t == 0 ? r.eval(x) : posterior_mean_value(model, r, t, x);
    }
  }
  std::vector<std::int64_t> codes(S);
  for (std::size_t s = 0; s < S; ++s) codes[s] = traj[s][0];
  fit_layer(out, out.cells_[0], codes, f[0], alpha, opts.space);
  if (opts.features)
    fit_features(opts.features, 0, model, codes, f[0], alpha, opts.space, out.coef_[0],
                 out.shift_[0]);

  for (int j = 1; j <= opts.iterations; ++j) {
    std::vector<std::vector<double>> next = f;
    for (int t = 1; t <= T; ++t) {
      for (std::size_t s = 0; s < S; ++s) codes[s] = traj[s][t];
      if (opts.features) {
        fit_features(opts.features, t, model, codes, f[t - 1], alpha, opts.space, out.coef_[t],
                     out.shift_[t]);
        for (std::size_t s = 0; s < S; ++s)
          next[t][s] = out.value(t, decode_state(codes[s], model.K(), model.L()));
      } else {
        fit_layer(out, out.cells_[t], codes, f[t - 1], alpha, opts.space);
        for (std::size_t s = 0; s < S; ++s) next[t][s] = out.cells_[t].at(codes[s]);
      }
    }
    f = std::move(next);
  }
  return out;
}

}  // namespace dalign
