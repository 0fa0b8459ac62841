#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <vector>

#include "dalign/samplers/guidance.hpp"

namespace dalign {

struct SearchConfig {
  int width = 4;          // children per node
  int depth_limit = 1;    // tree depth below the committed state
  int simulations = 4;    // UCT iterations per committed step
  double exploration_c = 0.0;
  int lookahead_k = 0;    // pre-trained rollout steps before leaf evaluation
};

/// Rolls the pre-trained process k steps down from x at step t, then returns
/// the value model at the reached state.
template <DiffusionProcess P>
double leaf_rollout_value(const P& process, const ValueModel<typename P::State>& values,
                          const typename P::State& x, int t, int k, Rng& rng) {
  require(k >= 0 && k <= t, Errc::invalid_argument, "lookahead exceeds remaining steps");
  auto y = x;
  for (int s = t; s > t - k; --s) y = process.sample_step(y, s, rng);
  return values(t - k, y);
}

template <class S>
struct MctsReport {
  SamplerReport<S> report;
  /// Sum of root-child visit counts for every (particle, committed step).
  std::vector<int> root_visits;
};

namespace detail {

template <class S>
struct TreeNode {
  S state;
  int t = 0;
  int depth = 0;
  std::vector<int> children;
  int visits = 0;
  double total = 0.0;
  double mean() const { return visits ? total / visits : 0.0; }
};

inline int select_child(const std::vector<int>& children, const std::vector<double>& score) {
  int best = 0;
  for (std::size_t j = 1; j < children.size(); ++j)
    if (score[j] > score[best]) best = static_cast<int>(j);
  return best;
}

}  // namespace detail

/// UCT over denoising trees: at each step, expand up to `width` proposal
/// children per node, evaluate new leaves with leaf_rollout_value, back up
/// arithmetic means and commit the most visited root child (ties: higher
/// mean, then lower index). Root child j uses the same random stream as
/// beam-search candidate j.
template <DiffusionProcess P>
MctsReport<typename P::State> mcts_denoise(
    const P& process, const ValueModel<typename P::State>& values, const RewardModel& r,
    const SearchConfig& sc, const GuidanceConfig& cfg,
    const TransitionKernel<typename P::State>* proposal = nullptr) {
  using S = typename P::State;
  using Node = detail::TreeNode<S>;
  require(sc.width >= 1 && sc.depth_limit >= 1 && sc.simulations >= 1, Errc::invalid_argument,
          "search needs width, depth and simulations >= 1");
  require(sc.exploration_c >= 0.0 && sc.lookahead_k >= 0, Errc::invalid_argument,
          "exploration constant and lookahead must be >= 0");
  require(cfg.N >= 1, Errc::invalid_argument, "N must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  const auto pre = pretrained_kernel(process);
  const auto& q = proposal ? *proposal : pre;
  const int T = process.horizon();

  MctsReport<S> out;
  auto& rep = out.report;
  rep.states.resize(cfg.N);
  if (cfg.record_trajectories) rep.trajectories.resize(cfg.N);
  std::vector<std::vector<int>> visits(cfg.N);

  parallel_for(cfg.N, cfg.threads, [&](std::size_t i) {
    S x;
    if (process.stochastic_initial()) {
      // Initial law handled like beam search: keep the best of `width` draws.
      std::vector<S> cand(sc.width);
      std::vector<double> v(sc.width);
      for (int j = 0; j < sc.width; ++j) {
        Rng rng = make_stream(cfg.seed, Stream::proposal, i, detail::step_key(T + 1), j);
        cand[j] = process.sample_initial(rng);
        v[j] = values(T, cand[j]);
      }
      x = cand[detail::argmax_lowest(v)];
    } else {
      Rng rng = make_stream(cfg.seed, Stream::proposal, i, detail::step_key(T + 1), 0);
      x = process.sample_initial(rng);
    }
    if (cfg.record_trajectories) rep.trajectories[i].push_back(x);

    for (int t = T; t >= 1; --t) {
      std::vector<Node> tree;
      tree.push_back(Node{x, t, 0, {}, 0, 0.0});
      for (int sim = 0; sim < sc.simulations; ++sim) {
        std::vector<int> path{0};
        int node = 0;
        double leaf = 0.0;
        Rng roll = make_stream(cfg.seed, Stream::rollout, i, detail::step_key(t), sim);
        while (true) {
          Node& cur = tree[node];
          const bool can_grow = cur.t >= 1 && cur.depth < sc.depth_limit;
          if (can_grow && static_cast<int>(cur.children.size()) < sc.width) {
            const int j = static_cast<int>(cur.children.size());
            Rng rng = node == 0 ? make_stream(cfg.seed, Stream::proposal, i, detail::step_key(t), j)
                                : make_stream(cfg.seed, Stream::tree, i,
                                              (static_cast<std::uint64_t>(t) << 32) | node, j);
            Node child{q.sample(cur.state, cur.t, rng), cur.t - 1, cur.depth + 1, {}, 0, 0.0};
            const int k = std::min(sc.lookahead_k, child.t);
            leaf = leaf_rollout_value(process, values, child.state, child.t, k, roll);
            tree[node].children.push_back(static_cast<int>(tree.size()));
            path.push_back(static_cast<int>(tree.size()));
            tree.push_back(std::move(child));
            break;
          }
          if (!can_grow) {
            const int k = std::min(sc.lookahead_k, cur.t);
            leaf = leaf_rollout_value(process, values, cur.state, cur.t, k, roll);
            break;
          }
          std::vector<double> score(cur.children.size());
          for (std::size_t c = 0; c < cur.children.size(); ++c) {
            const Node& ch = tree[cur.children[c]];
            score[c] = ch.mean() + sc.exploration_c *
                                       std::sqrt(std::log(static_cast<double>(cur.visits)) / ch.visits);
          }
          node = cur.children[detail::select_child(cur.children, score)];
          path.push_back(node);
        }
        for (int n : path) {
          tree[n].visits += 1;
          tree[n].total += leaf;
        }
      }
      // Commit: most visits, then higher mean, then lower index.
      const auto& kids = tree[0].children;
      int best = 0, sum = 0;
      for (std::size_t c = 0; c < kids.size(); ++c) {
        const Node& a = tree[kids[c]];
        const Node& b = tree[kids[best]];
        sum += a.visits;
        if (a.visits > b.visits || (a.visits == b.visits && a.mean() > b.mean()))
          best = static_cast<int>(c);
      }
      visits[i].push_back(sum);
      x = tree[kids[best]].state;
      if (cfg.record_trajectories) rep.trajectories[i].push_back(x);
    }
    rep.states[i] = x;
  });
  for (const auto& v : visits) out.root_visits.insert(out.root_visits.end(), v.begin(), v.end());
  rep.ess_trace.assign(T + 1, static_cast<double>(cfg.N));
  detail::finish_report(rep, r, t0);
  return out;
}

// ---------------------------------------------------------------------------
// Iterative refinement

template <class S>
struct RefineConfig {
  int k = 1;   // renoise level; 0 keeps the design, T+1 regenerates from scratch
  int iterations = 10;
  /// Distance to the seed reported in the trace; the constraint is
  /// distance <= max_distance.
  std::function<double(const S&)> distance;
  double max_distance = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
};

/// Re-denoises from a renoised state; k = T+1 means a fresh generation.
template <class S>
using InnerSampler = std::function<S(const S& renoised, int k, std::uint64_t seed)>;

template <class S>
struct RefineRecord {
  int iteration = 0;
  S proposal;
  double reward = 0.0;
  double constraint_distance = 0.0;
  bool accepted = false;
};

template <class S>
struct RefineResult {
  std::vector<S> iterates;          // accepted design after each iteration, seed first
  std::vector<double> rewards;      // reward of each iterate
  std::vector<RefineRecord<S>> log; // every proposal, in order
};

/// Greedy refinement: renoise, re-denoise with the inner sampler, drop
/// proposals that break the constraint (retrying), and accept when the
/// reward does not decrease.
template <DiffusionProcess P>
RefineResult<typename P::State> iterative_refine(const P& process,
                                                 const InnerSampler<typename P::State>& inner,
                                                 const typename P::State& x_seed,
                                                 const RewardModel& r,
                                                 const RefineConfig<typename P::State>& cfg) {
  using S = typename P::State;
  const int T = process.horizon();
  require(cfg.k >= 0 && cfg.k <= T + 1, Errc::invalid_argument, "renoise level must be in [0, T+1]");
  require(cfg.iterations >= 0, Errc::invalid_argument, "iteration count must be >= 0");
  RefineResult<S> res;
  S cur = x_seed;
  double cur_r = r.eval(cur);
  res.iterates.push_back(cur);
  res.rewards.push_back(cur_r);
  long consecutive = 0;
  std::uint64_t draw = 0;
  for (int s = 1; s <= cfg.iterations; ++s) {
    while (true) {
      Rng rng = make_stream(cfg.seed, Stream::forward, draw);
      S prop;
      if (cfg.k == 0) {
        prop = cur;
      } else {
        const S noisy = cfg.k <= T ? process.forward_sample(cur, cfg.k, rng) : cur;
        prop = inner(noisy, cfg.k, cfg.seed ^ (0x9E3779B97F4A7C15ull * (draw + 1)));
      }
      ++draw;
      RefineRecord<S> rec;
      rec.iteration = s;
      rec.reward = r.eval(prop);
      rec.constraint_distance = cfg.distance ? cfg.distance(prop) : 0.0;
      const bool feasible = rec.constraint_distance <= cfg.max_distance;
      if (!feasible) {
        rec.proposal = std::move(prop);
        res.log.push_back(std::move(rec));
        if (++consecutive >= 10L * cfg.iterations)
          throw Error(Errc::stall, "constraint rejected " + std::to_string(consecutive) +
                                       " consecutive proposals");
        continue;
      }
      consecutive = 0;
      rec.accepted = rec.reward >= cur_r;
      if (rec.accepted) {
        cur = prop;
        cur_r = rec.reward;
      }
      rec.proposal = std::move(prop);
      res.log.push_back(std::move(rec));
      break;
    }
    res.iterates.push_back(cur);
    res.rewards.push_back(cur_r);
  }
  return res;
}

/// "iteration,reward,constraint_distance,accepted" rows with header.
template <class S>
void export_refine_csv(const RefineResult<S>& res, std::ostream& os) {
  os << "iteration,reward,constraint_distance,accepted\n";
  for (const auto& rec : res.log)
    os << rec.iteration << ',' << rec.reward << ',' << rec.constraint_distance << ','
       << (rec.accepted ? 1 : 0) << '\n';
}

}  // namespace dalign
