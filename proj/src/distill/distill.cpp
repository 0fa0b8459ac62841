#include "dalign/distill/distill.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dalign/core/error.hpp"
#include "dalign/kernels/kernels.hpp"

namespace dalign {

namespace {

constexpr double kSmoothing = 1e-9;

std::vector<double> softmax(const std::vector<double>& logits) {
  const double lse = kernels::log_sum_exp(logits);
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lse);
  return p;
}

int find_next(const TabularPolicy::Row& row, std::int64_t code) {
  auto it = std::find(row.next.begin(), row.next.end(), code);
  return it == row.next.end() ? -1 : static_cast<int>(it - row.next.begin());
}

double row_logprob(const TabularPolicy::Row& row, std::int64_t code) {
  const int j = find_next(row, code);
  if (j < 0) return -std::numeric_limits<double>::infinity();
  return row.logits[j] - kernels::log_sum_exp(row.logits);
}

}  // namespace

std::vector<double> TabularPolicy::Row::probs() const { return softmax(logits); }

TabularPolicy::TabularPolicy(const MaskedProcess& process) : process_(&process) {}

std::int64_t TabularPolicy::key(int t, const DiscreteSequence& x) const {
  return static_cast<std::int64_t>(t) * process_->num_states() + encode_state(x);
}

TabularPolicy::Row TabularPolicy::pretrained_row(int t, const DiscreteSequence& x) const {
  Row row;
  MaskedProcess::for_each_successor(x, process_->step_rows(x, t), [&](std::int64_t c, double p) {
    row.next.push_back(c);
    row.logits.push_back(std::log(p));
  });
  return row;
}

TabularPolicy::Row& TabularPolicy::row(int t, const DiscreteSequence& x) {
  require(t >= 1 && t <= process_->horizon(), Errc::invalid_argument, "step out of range");
  const auto k = key(t, x);
  auto it = rows_.find(k);
  if (it == rows_.end()) it = rows_.emplace(k, pretrained_row(t, x)).first;
  return it->second;
}

const TabularPolicy::Row* TabularPolicy::find(int t, const DiscreteSequence& x) const {
  auto it = rows_.find(key(t, x));
  return it == rows_.end() ? nullptr : &it->second;
}

double TabularPolicy::logprob(const DiscreteSequence& next, const DiscreteSequence& x,
                              int t) const {
  if (const Row* r = find(t, x)) return row_logprob(*r, encode_state(next));
  return process_->step_logprob(next, x, t);
}

DiscreteSequence TabularPolicy::sample(const DiscreteSequence& x, int t, Rng& rng) const {
  const Row* r = find(t, x);
  if (!r) return process_->sample_step(x, t, rng);
  const auto p = r->probs();
  const int j = sample_categorical(p, rng);
  return decode_state(r->next[j], process_->K(), process_->L());
}

TransitionKernel<DiscreteSequence> TabularPolicy::kernel() const {
  auto snap = std::make_shared<const TabularPolicy>(*this);
  TransitionKernel<DiscreteSequence> k;
  k.kind = KernelKind::proposal;
  k.sample = [snap](const DiscreteSequence& x, int t, Rng& rng) { return snap->sample(x, t, rng); };
  k.logprob = [snap](const DiscreteSequence& next, const DiscreteSequence& x, int t) {
    return snap->logprob(next, x, t);
  };
  return k;
}

DistributionTable TabularPolicy::terminal_law() const {
  const MaskedProcess& pr = *process_;
  const std::int64_t n = pr.num_states();
  std::vector<double> cur(n, 0.0), nxt(n, 0.0);
  cur[encode_state(fully_masked(pr.K(), pr.L()))] = 1.0;
  for (int t = pr.horizon(); t >= 1; --t) {
    std::fill(nxt.begin(), nxt.end(), 0.0);
    for (std::int64_t code = 0; code < n; ++code) {
      if (cur[code] == 0.0) continue;
      const double mass = cur[code];
      const auto x = decode_state(code, pr.K(), pr.L());
      if (const Row* r = find(t, x)) {
        const auto p = r->probs();
        for (std::size_t j = 0; j < p.size(); ++j) nxt[r->next[j]] += mass * p[j];
      } else {
        MaskedProcess::for_each_successor(x, pr.step_rows(x, t),
                                          [&](std::int64_t c, double p) { nxt[c] += mass * p; });
      }
    }
    std::swap(cur, nxt);
  }
  std::vector<double> masses(pr.data().size(), 0.0);
  for (std::int64_t code = 0; code < n; ++code) {
    if (cur[code] == 0.0) continue;
    const auto x = decode_state(code, pr.K(), pr.L());
    require(x.masked_count() == 0, Errc::validation, "policy left masked tokens at t = 0");
    masses[pr.data().index_of(x)] += cur[code];
  }
  return DistributionTable::from_masses(pr.K(), pr.L(), std::move(masses));
}

std::vector<std::pair<int, DiscreteSequence>> TabularPolicy::visited_cells() const {
  std::vector<std::pair<std::int64_t, std::int64_t>> keys;
  for (const auto& [k, row] : rows_) keys.emplace_back(k / process_->num_states(), k % process_->num_states());
  std::sort(keys.begin(), keys.end());
  std::vector<std::pair<int, DiscreteSequence>> out;
  for (auto [t, c] : keys)
    out.emplace_back(static_cast<int>(t), decode_state(c, process_->K(), process_->L()));
  return out;
}

void TabularPolicy::export_table(std::ostream& os) const {
  os << "t,state,next_state,prob\n";
  const auto old = os.precision(17);
  for (const auto& [t, x] : visited_cells()) {
    const Row& r = *find(t, x);
    const auto p = r.probs();
    for (std::size_t j = 0; j < p.size(); ++j)
      os << t << ',' << x.str() << ','
         << decode_state(r.next[j], process_->K(), process_->L()).str() << ',' << p[j] << '\n';
  }
  os.precision(old);
}

TabularPolicy::Row soft_optimal_row(const MaskedProcess& process, const DiscreteValueModel& values,
                                    double alpha, int t, const DiscreteSequence& x) {
  require(alpha > 0, Errc::invalid_argument, "alpha must be > 0");
  TabularPolicy::Row row;
  const double vt = values(t, x);
  MaskedProcess::for_each_successor(x, process.step_rows(x, t), [&](std::int64_t c, double p) {
    const auto y = decode_state(c, process.K(), process.L());
    row.next.push_back(c);
    row.logits.push_back(std::log(p) + (values(t - 1, y) - vt) / alpha);
  });
  return row;
}

std::vector<Trajectory> kernel_trajectories(const MaskedProcess& process,
                                            const TransitionKernel<DiscreteSequence>& kernel,
                                            std::size_t n, std::uint64_t seed) {
  std::vector<Trajectory> out(n);
  const int T = process.horizon();
  for (std::size_t i = 0; i < n; ++i) {
    auto x = fully_masked(process.K(), process.L());
    out[i].push_back(x);
    for (int t = T; t >= 1; --t) {
      Rng rng = make_stream(seed, Stream::proposal, i, detail::step_key(t), 0);
      x = kernel.sample(x, t, rng);
      out[i].push_back(x);
    }
  }
  return out;
}

std::vector<RollinState> make_rollin(const RollinSpec& spec,
                                     const TransitionKernel<DiscreteSequence>& teacher,
                                     const TabularPolicy& student, const MaskedProcess& process,
                                     std::size_t n, std::uint64_t seed) {
  std::vector<RollinState> out;
  const int T = process.horizon();
  if (spec.kind == RollinKind::forward_recycle) {
    require(!spec.dataset.empty(), Errc::invalid_argument, "forward_recycle needs a dataset");
    for (std::size_t i = 0; i < spec.dataset.size(); ++i) {
      Rng rng = make_stream(seed, Stream::forward, i, 0, 0);
      require(spec.recycle_step >= 0 && spec.recycle_step <= T, Errc::invalid_argument,
              "recycle_step out of range");
      const int t = spec.recycle_step ? spec.recycle_step
                                      : 1 + static_cast<int>(uniform01(rng) * T) % T;
      out.push_back({t, process.forward_sample(spec.dataset[i], t, rng)});
    }
    return out;
  }
  require(spec.mix >= 0 && spec.mix <= 1, Errc::invalid_argument, "mix must lie in [0, 1]");
  const auto stud = student.kernel();
  for (std::size_t i = 0; i < n; ++i) {
    bool use_teacher = spec.kind == RollinKind::teacher;
    if (spec.kind == RollinKind::teacher && spec.mix < 1.0) {
      Rng pick = make_stream(seed, Stream::misc, i, 0, 0);
      use_teacher = uniform01(pick) < spec.mix;
    }
    const auto& k = use_teacher ? teacher : stud;
    auto x = fully_masked(process.K(), process.L());
    for (int t = T; t >= 1; --t) {
      out.push_back({t, x});
      Rng rng = make_stream(seed, Stream::proposal, i, detail::step_key(t), 0);
      x = k.sample(x, t, rng);
    }
  }
  return out;
}

std::vector<RollinState> reachable_cells(const MaskedProcess& process) {
  std::vector<RollinState> out;
  std::vector<char> cur(process.num_states(), 0), next(process.num_states(), 0);
  cur[encode_state(fully_masked(process.K(), process.L()))] = 1;
  for (int t = process.horizon(); t >= 1; --t) {
    std::fill(next.begin(), next.end(), 0);
    for (std::int64_t code = 0; code < process.num_states(); ++code) {
      if (!cur[code]) continue;
      const auto x = decode_state(code, process.K(), process.L());
      out.push_back({t, x});
      MaskedProcess::for_each_successor(x, process.step_rows(x, t),
                                        [&](std::int64_t c, double) { next[c] = 1; });
    }
    std::swap(cur, next);
  }
  return out;
}

std::vector<Transition> teacher_transitions(const std::vector<RollinState>& states,
                                            const TransitionKernel<DiscreteSequence>& teacher,
                                            std::uint64_t seed) {
  std::vector<Transition> out;
  out.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    Rng rng = make_stream(seed, Stream::proposal, i, detail::step_key(states[i].t), 1);
    out.push_back({states[i].t, states[i].x, teacher.sample(states[i].x, states[i].t, rng)});
  }
  return out;
}

std::vector<Transition> trajectory_transitions(const std::vector<Trajectory>& trajectories) {
  std::vector<Transition> out;
  for (const auto& tr : trajectories) {
    const int T = static_cast<int>(tr.size()) - 1;
    for (int k = 0; k < T; ++k) out.push_back({T - k, tr[k], tr[k + 1]});
  }
  return out;
}

TransitionKernel<DiscreteSequence> svdd_step_kernel(const MaskedProcess& process,
                                                    const DiscreteValueModel& values, double alpha,
                                                    int M) {
  require(M >= 1, Errc::invalid_argument, "M must be >= 1");
  require(alpha > 0, Errc::invalid_argument, "alpha must be > 0");
  TransitionKernel<DiscreteSequence> k;
  k.kind = KernelKind::guided;
  const MaskedProcess* p = &process;
  k.sample = [p, values, alpha, M](const DiscreteSequence& x, int t, Rng& rng) {
    std::vector<DiscreteSequence> cand;
    std::vector<double> logw;
    for (int j = 0; j < M; ++j) {
      cand.push_back(p->sample_step(x, t, rng));
      logw.push_back(values(t - 1, cand.back()) / alpha);
    }
    return cand[sample_log_categorical(logw, rng)];
  };
  k.logprob = [](const DiscreteSequence&, const DiscreteSequence&, int) -> double {
    throw Error(Errc::unsupported_value_model, "svdd step kernel has no tractable density");
  };
  return k;
}

DistillStats distill_kl(const std::vector<Transition>& teacher, TabularPolicy& student) {
  DistillStats st;
  st.transitions = teacher.size();
  std::unordered_map<std::int64_t, std::vector<double>> counts;
  std::vector<std::pair<int, DiscreteSequence>> order;
  const std::int64_t n = student.process().num_states();
  for (const auto& tr : teacher) {
    auto& row = student.row(tr.t, tr.x);
    const std::int64_t k = static_cast<std::int64_t>(tr.t) * n + encode_state(tr.x);
    auto [it, fresh] = counts.try_emplace(k, row.next.size(), 0.0);
    if (fresh) order.emplace_back(tr.t, tr.x);
    const int j = find_next(row, encode_state(tr.next));
    require(j >= 0, Errc::validation, "teacher transition outside the pre-trained support");
    it->second[j] += 1.0;
  }
  for (const auto& [t, x] : order) {
    auto& row = student.row(t, x);
    const auto& c = counts[static_cast<std::int64_t>(t) * n + encode_state(x)];
    double total = 0.0;
    for (double v : c) total += v;
    const double denom = total + kSmoothing * static_cast<double>(c.size());
    for (std::size_t j = 0; j < c.size(); ++j) row.logits[j] = std::log((c[j] + kSmoothing) / denom);
  }
  st.visited_cells = order.size();
  return st;
}

namespace {

double pcl_residual(const TabularPolicy& student, const DiscreteValueModel& values, double alpha,
                    const Transition& tr) {
  const double lp = student.logprob(tr.next, tr.x, tr.t);
  const double lpre = student.process().step_logprob(tr.next, tr.x, tr.t);
  return lp - lpre - values(tr.t - 1, tr.next) / alpha + values(tr.t, tr.x) / alpha;
}

}  // namespace

double pcl_loss(const TabularPolicy& student, const DiscreteValueModel& values, double alpha,
                const std::vector<Transition>& batch) {
  require(alpha > 0, Errc::invalid_argument, "alpha must be > 0");
  require(!batch.empty(), Errc::invalid_argument, "empty batch");
  double s = 0.0;
  for (const auto& tr : batch) {
    const double r = pcl_residual(student, values, alpha, tr);
    s += r * r;
  }
  return s / static_cast<double>(batch.size());
}

std::vector<Transition> support_batch(const TabularPolicy& student,
                                      const std::vector<RollinState>& cells) {
  std::vector<Transition> out;
  const auto& pr = student.process();
  for (const auto& c : cells) {
    const auto* r = student.find(c.t, c.x);
    const auto row = r ? *r : student.pretrained_row(c.t, c.x);
    for (auto code : row.next) out.push_back({c.t, c.x, decode_state(code, pr.K(), pr.L())});
  }
  return out;
}

OptimizeResult pcl_optimize(TabularPolicy& student, const DiscreteValueModel& values, double alpha,
                            const std::vector<Transition>& batch, const OptimizeOptions& opts) {
  require(alpha > 0, Errc::invalid_argument, "alpha must be > 0");
  require(!batch.empty(), Errc::invalid_argument, "empty batch");
  const auto& pr = student.process();
  // Residual offsets do not depend on the logits.
  struct Item {
    TabularPolicy::Row* row;
    int j;
    double offset;
  };
  std::vector<Item> items;
  for (const auto& tr : batch) {
    auto& row = student.row(tr.t, tr.x);
    const int j = find_next(row, encode_state(tr.next));
    require(j >= 0, Errc::invalid_argument, "batch pair outside the row support");
    const double off = -pr.step_logprob(tr.next, tr.x, tr.t) - values(tr.t - 1, tr.next) / alpha +
                       values(tr.t, tr.x) / alpha;
    items.push_back({&row, j, off});
  }
  std::unordered_map<TabularPolicy::Row*, std::vector<double>> grads;
  for (auto& it : items) grads.try_emplace(it.row, it.row->logits.size(), 0.0);
  const double B = static_cast<double>(items.size());
  OptimizeResult res;
  for (res.steps = 0;; ++res.steps) {
    for (auto& [row, g] : grads) std::fill(g.begin(), g.end(), 0.0);
    double loss = 0.0;
    std::unordered_map<TabularPolicy::Row*, std::vector<double>> probs;
    for (auto& [row, g] : grads) probs.emplace(row, row->probs());
    for (const auto& it : items) {
      const double lse = kernels::log_sum_exp(it.row->logits);
      const double r = it.row->logits[it.j] - lse + it.offset;
      loss += r * r;
      auto& g = grads[it.row];
      const auto& p = probs[it.row];
      const double c = 2.0 * r / B;
      for (std::size_t k = 0; k < g.size(); ++k) g[k] -= c * p[k];
      g[it.j] += c;
    }
    double norm2 = 0.0;
    for (auto& [row, g] : grads)
      for (double v : g) norm2 += v * v;
    res.loss = loss / B;
    res.grad_norm = std::sqrt(norm2);
    if (res.grad_norm < opts.grad_tol || res.steps >= opts.max_steps) break;
    for (auto& [row, g] : grads)
      for (std::size_t k = 0; k < g.size(); ++k) row->logits[k] -= opts.lr * g[k];
  }
  return res;
}

double distill_inverse_kl_step(TabularPolicy& student, const DiscreteValueModel& values,
                               double alpha, const std::vector<RollinState>& cells, double lr) {
  require(alpha > 0, Errc::invalid_argument, "alpha must be > 0");
  const auto& pr = student.process();
  const bool no_values = std::isinf(alpha);
  std::vector<std::pair<TabularPolicy::Row*, std::vector<double>>> updates;
  std::unordered_map<TabularPolicy::Row*, std::size_t> seen;
  double norm2 = 0.0;
  for (const auto& c : cells) {
    auto& row = student.row(c.t, c.x);
    if (!seen.emplace(&row, updates.size()).second) continue;
    const auto p = row.probs();
    std::vector<double> target(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
      const auto y = decode_state(row.next[k], pr.K(), pr.L());
      target[k] = pr.step_logprob(y, c.x, c.t);
      if (!no_values) target[k] += values(c.t - 1, y) / alpha;
    }
    double kl = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k)
      if (p[k] > 0) kl += p[k] * (std::log(p[k]) - target[k]);
    std::vector<double> g(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
      g[k] = p[k] > 0 ? p[k] * (std::log(p[k]) - target[k] - kl) : 0.0;
      norm2 += g[k] * g[k];
    }
    updates.emplace_back(&row, std::move(g));
  }
  for (auto& [row, g] : updates)
    for (std::size_t k = 0; k < g.size(); ++k) row->logits[k] -= lr * g[k];
  return std::sqrt(norm2);
}

double max_row_tv_to_optimal(const TabularPolicy& student, const DiscreteValueModel& values,
                             double alpha, const std::vector<RollinState>& cells) {
  double worst = 0.0;
  for (const auto& c : cells) {
    const auto opt = soft_optimal_row(student.process(), values, alpha, c.t, c.x);
    const auto q = opt.probs();
    double tv = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k) {
      const auto y = decode_state(opt.next[k], student.process().K(), student.process().L());
      tv += std::abs(std::exp(student.logprob(y, c.x, c.t)) - q[k]);
    }
    worst = std::max(worst, 0.5 * tv);
  }
  return worst;
}

}  // namespace dalign
