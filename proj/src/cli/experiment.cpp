#include "dalign/cli/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <set>
#include <sstream>

#include "dalign/core/parallel.hpp"
#include "dalign/distill/distill.hpp"
#include "dalign/oracle/metrics.hpp"
#include "dalign/samplers/continuous_guidance.hpp"
#include "dalign/samplers/discrete_guidance.hpp"
#include "dalign/search/search.hpp"
#include "dalign/values/discrete_values.hpp"
#include "dalign/values/gaussian_values.hpp"

namespace dalign::cli {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---- config access -------------------------------------------------------

const json& member(const json& obj, const std::string& key, const std::string& field) {
  if (!obj.is_object() || !obj.contains(key)) throw ConfigError(field, "missing required field");
  return obj.at(key);
}

template <class T>
T get(const json& obj, const std::string& key, const std::string& prefix, T fallback) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(prefix + "." + key, "has the wrong type");
  }
}

template <class T>
T require_field(const json& obj, const std::string& key, const std::string& prefix) {
  const json& v = member(obj, key, prefix + "." + key);
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(prefix + "." + key, "has the wrong type");
  }
}

Eigen::VectorXd vector_field(const json& obj, const std::string& key, const std::string& prefix) {
  const auto v = require_field<std::vector<double>>(obj, key, prefix);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::Matrix3d matrix3_field(const json& obj, const std::string& key, const std::string& prefix) {
  const auto v = require_field<std::vector<double>>(obj, key, prefix);
  if (v.size() != 9) throw ConfigError(prefix + "." + key, "needs 9 numbers (row-major 3x3)");
  Eigen::Matrix3d m;
  for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = v[i];
  return m;
}

// ---- formatting ----------------------------------------------------------

std::string num(double x) {
  if (std::isnan(x)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string state_text(const DiscreteSequence& x) { return x.str(); }

std::string state_text(const Eigen::VectorXd& x) {
  std::string s;
  for (Eigen::Index i = 0; i < x.size(); ++i) s += (i ? " " : "") + num(x[i]);
  return s;
}

std::string state_text(const Eigen::Matrix3d& x) {
  std::string s;
  for (int i = 0; i < 9; ++i) s += (i ? " " : "") + num(x(i / 3, i % 3));
  return s;
}

// ---- built components ----------------------------------------------------

enum class ModelKind { masked, gaussian, so3 };

struct Built {
  ModelKind kind = ModelKind::masked;
  std::unique_ptr<MaskedProcess> masked;
  std::unique_ptr<GaussianProcess> gaussian;
  std::unique_ptr<SO3Process> so3;
  std::unique_ptr<RewardModel> reward;
  Eigen::VectorXd linear_c;  // linear rewards only
  double linear_offset = 0.0;
};

NoiseSchedule build_schedule(const json& model) {
  const json& s = member(model, "schedule", "model.schedule");
  const auto kind_name = get<std::string>(s, "kind", "model.schedule", "linear");
  ScheduleKind kind;
  try {
    kind = parse_schedule_kind(kind_name);
  } catch (const Error&) {
    throw ConfigError("model.schedule.kind", "unknown schedule '" + kind_name + "'");
  }
  const int T = require_field<int>(s, "T", "model.schedule");
  if (T < 1) throw ConfigError("model.schedule.T", "must be >= 1");
  return make_schedule(kind, T);
}

RewardModel build_reward(const json& r, const std::string& prefix, const Built& b,
                         Eigen::VectorXd* linear_c, double* linear_offset) {
  const auto kind = require_field<std::string>(r, "kind", prefix);
  if (kind == "constant") return RewardModel::constant(get<double>(r, "value", prefix, 0.0));
  if (kind == "linear") {
    auto c = vector_field(r, "c", prefix);
    const double off = get<double>(r, "offset", prefix, 0.0);
    if (b.kind != ModelKind::gaussian || c.size() != b.gaussian->dim())
      throw ConfigError(prefix + ".c", "linear rewards need a gaussian model of matching dimension");
    if (linear_c) *linear_c = c;
    if (linear_offset) *linear_offset = off;
    return RewardModel::linear(c, off);
  }
  if (kind == "quadratic") {
    auto m = vector_field(r, "m", prefix);
    if (b.kind != ModelKind::gaussian || m.size() != b.gaussian->dim())
      throw ConfigError(prefix + ".m", "quadratic rewards need a gaussian model of matching dimension");
    return RewardModel::quadratic(m, get<double>(r, "scale", prefix, 1.0));
  }
  if (kind == "table") {
    if (b.kind != ModelKind::masked) throw ConfigError(prefix + ".kind", "table rewards need a masked model");
    std::vector<std::pair<std::string, double>> entries;
    try {
      entries = member(r, "entries", prefix + ".entries")
                    .get<std::vector<std::pair<std::string, double>>>();
    } catch (const json::exception&) {
      throw ConfigError(prefix + ".entries", "expects [[\"SEQ\", value], ...]");
    }
    try {
      return RewardModel::table(b.masked->K(), b.masked->L(), entries);
    } catch (const Error& e) {
      throw ConfigError(prefix + ".entries", e.what());
    }
  }
  if (kind == "frobenius") {
    if (b.kind != ModelKind::so3) throw ConfigError(prefix + ".kind", "frobenius rewards need an so3 model");
    return RewardModel::frobenius(matrix3_field(r, "target", prefix), get<double>(r, "scale", prefix, 1.0));
  }
  if (kind == "composite") {
    const json& parts = member(r, "parts", prefix + ".parts");
    if (!parts.is_array() || parts.empty()) throw ConfigError(prefix + ".parts", "needs a non-empty list");
    std::vector<std::pair<double, RewardModel>> out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const std::string p = prefix + ".parts[" + std::to_string(i) + "]";
      out.emplace_back(require_field<double>(parts[i], "weight", p),
                       build_reward(member(parts[i], "reward", p + ".reward"), p + ".reward", b,
                                    nullptr, nullptr));
    }
    return RewardModel::composite(std::move(out));
  }
  throw ConfigError(prefix + ".kind", "unknown reward kind '" + kind + "'");
}

std::unique_ptr<Built> build(const json& doc) {
  auto b = std::make_unique<Built>();
  const json& model = member(doc, "model", "model");
  const auto kind = require_field<std::string>(model, "kind", "model");
  if (kind == "masked") {
    b->kind = ModelKind::masked;
    const int K = require_field<int>(model, "K", "model");
    const int L = require_field<int>(model, "L", "model");
    if (K < 1 || K > kMaxVocab) throw ConfigError("model.K", "must lie in [1, 8]");
    if (L < 1 || L > kMaxLength) throw ConfigError("model.L", "must lie in [1, 6]");
    std::vector<std::pair<std::string, double>> entries;
    try {
      entries = member(model, "data", "model.data").get<std::vector<std::pair<std::string, double>>>();
    } catch (const json::exception&) {
      throw ConfigError("model.data", "expects [[\"SEQ\", probability], ...]");
    }
    DistributionTable data;
    try {
      data = DistributionTable::from_entries(K, L, entries);
    } catch (const Error& e) {
      throw ConfigError("model.data", e.what());
    }
    b->masked = std::make_unique<MaskedProcess>(std::move(data), build_schedule(model));
  } else if (kind == "gaussian") {
    b->kind = ModelKind::gaussian;
    const json& comps = member(model, "components", "model.components");
    if (!comps.is_array() || comps.empty())
      throw ConfigError("model.components", "needs a non-empty list");
    GaussianMixtureData data;
    for (std::size_t i = 0; i < comps.size(); ++i) {
      const std::string p = "model.components[" + std::to_string(i) + "]";
      data.components.push_back({require_field<double>(comps[i], "weight", p),
                                 vector_field(comps[i], "mean", p), vector_field(comps[i], "var", p)});
    }
    try {
      data.validate();
    } catch (const Error& e) {
      throw ConfigError("model.components", e.what());
    }
    b->gaussian = std::make_unique<GaussianProcess>(std::move(data), build_schedule(model));
  } else if (kind == "so3") {
    b->kind = ModelKind::so3;
    b->so3 = std::make_unique<SO3Process>();
    b->so3->kappa = get<double>(model, "kappa", "model", 1.0);
    b->so3->T = get<int>(model, "T", "model", 100);
    if (model.contains("mean")) b->so3->mean = matrix3_field(model, "mean", "model");
    if (b->so3->T < 1) throw ConfigError("model.T", "must be >= 1");
  } else {
    throw ConfigError("model.kind", "unknown model kind '" + kind + "' (masked, gaussian, so3)");
  }
  b->reward = std::make_unique<RewardModel>(build_reward(member(doc, "reward", "reward"), "reward",
                                                         *b, &b->linear_c, &b->linear_offset));
  return b;
}

// ---- sampler block -------------------------------------------------------

const std::set<std::string> kMaskedAlgorithms{"pretrained", "best_of_n",      "smc",
                                              "svdd",       "nested_smc",     "beam_search",
                                              "discrete_exact", "discrete_taylor", "mcts"};
const std::set<std::string> kGaussianAlgorithms{"pretrained",  "best_of_n",  "smc",
                                                "svdd",        "nested_smc", "beam_search",
                                                "classifier_guidance", "mcts", "walk_jump"};
const std::set<std::string> kZeroAlphaOk{"pretrained", "best_of_n", "svdd", "beam_search", "mcts"};
const std::vector<std::string> kSweepParameters{"N", "M", "alpha", "ess_threshold", "width",
                                                "simulations", "lookahead_k", "depth_limit"};

struct SamplerSpec {
  std::string algorithm;
  GuidanceConfig g;
  SearchConfig search;
  std::string proposal = "pretrained";
  int runs = 1;
  double beta = 0.05;
  long steps = 100000;
  long burn_in = 1000;
  long thin = 10;
  double smoothing = 0.5;
  bool guided = true;
};

SamplerSpec sampler_spec(const ExperimentConfig& cfg) {
  const json& s = member(cfg.doc, "sampler", "sampler");
  SamplerSpec sp;
  sp.algorithm = require_field<std::string>(s, "algorithm", "sampler");
  sp.g.alpha = get<double>(s, "alpha", "sampler", 1.0);
  sp.g.N = get<int>(s, "N", "sampler", 1);
  sp.g.M = get<int>(s, "M", "sampler", 1);
  sp.g.ess_threshold = get<double>(s, "ess_threshold", "sampler", 0.5);
  sp.g.seed = cfg.seed;
  sp.g.threads = cfg.threads;
  const auto res = get<std::string>(s, "resampling", "sampler", "multinomial");
  if (res == "multinomial") sp.g.resampling = Resampling::multinomial;
  else if (res == "systematic") sp.g.resampling = Resampling::systematic;
  else throw ConfigError("sampler.resampling", "must be multinomial or systematic");
  sp.proposal = get<std::string>(s, "proposal", "sampler", "pretrained");
  if (sp.proposal != "pretrained" && sp.proposal != "guided")
    throw ConfigError("sampler.proposal", "must be pretrained or guided");
  sp.g.proposal = sp.proposal == "guided" ? ProposalKind::classifier_guided : ProposalKind::pretrained;
  sp.runs = get<int>(s, "runs", "sampler", 1);
  if (s.contains("search")) {
    const json& q = s.at("search");
    sp.search.width = get<int>(q, "width", "sampler.search", sp.search.width);
    sp.search.depth_limit = get<int>(q, "depth_limit", "sampler.search", sp.search.depth_limit);
    sp.search.simulations = get<int>(q, "simulations", "sampler.search", sp.search.simulations);
    sp.search.exploration_c = get<double>(q, "exploration_c", "sampler.search", sp.search.exploration_c);
    sp.search.lookahead_k = get<int>(q, "lookahead_k", "sampler.search", sp.search.lookahead_k);
  }
  if (s.contains("walk_jump")) {
    const json& w = s.at("walk_jump");
    sp.beta = get<double>(w, "beta", "sampler.walk_jump", sp.beta);
    sp.steps = get<long>(w, "steps", "sampler.walk_jump", sp.steps);
    sp.burn_in = get<long>(w, "burn_in", "sampler.walk_jump", sp.burn_in);
    sp.thin = get<long>(w, "thin", "sampler.walk_jump", sp.thin);
    sp.smoothing = get<double>(w, "smoothing", "sampler.walk_jump", sp.smoothing);
  }
  sp.guided = get<bool>(s, "guided", "sampler", true);
  return sp;
}

void check_sampler(const SamplerSpec& sp, ModelKind kind) {
  if (kind == ModelKind::masked && !kMaskedAlgorithms.count(sp.algorithm))
    throw ConfigError("sampler.algorithm", "'" + sp.algorithm + "' is not available for masked models");
  if (kind == ModelKind::gaussian && !kGaussianAlgorithms.count(sp.algorithm))
    throw ConfigError("sampler.algorithm", "'" + sp.algorithm + "' is not available for gaussian models");
  if (kind == ModelKind::so3 && sp.algorithm != "so3_guidance")
    throw ConfigError("sampler.algorithm", "so3 models support so3_guidance only");
  if (!std::isfinite(sp.g.alpha) && !std::isinf(sp.g.alpha))
    throw ConfigError("sampler.alpha", "must be a number");
  if (sp.g.alpha < 0) throw ConfigError("sampler.alpha", "must be >= 0");
  if (sp.g.alpha == 0 && !kZeroAlphaOk.count(sp.algorithm))
    throw ConfigError("sampler.alpha", "alpha = 0 (argmax limit) is only valid for svdd, beam_search "
                                       "and mcts, not " + sp.algorithm);
  if (sp.g.N < 1) throw ConfigError("sampler.N", "must be >= 1");
  if (sp.g.M < 1) throw ConfigError("sampler.M", "must be >= 1");
  if (!(sp.g.ess_threshold > 0 && sp.g.ess_threshold <= 1))
    throw ConfigError("sampler.ess_threshold", "must lie in (0, 1]");
  if (sp.runs < 1) throw ConfigError("sampler.runs", "must be >= 1");
  if (sp.search.width < 1) throw ConfigError("sampler.search.width", "must be >= 1");
  if (sp.search.depth_limit < 1) throw ConfigError("sampler.search.depth_limit", "must be >= 1");
  if (sp.search.simulations < 1) throw ConfigError("sampler.search.simulations", "must be >= 1");
  if (sp.search.exploration_c < 0) throw ConfigError("sampler.search.exploration_c", "must be >= 0");
  if (sp.search.lookahead_k < 0) throw ConfigError("sampler.search.lookahead_k", "must be >= 0");
  if (sp.algorithm == "walk_jump") {
    if (!(sp.beta > 0)) throw ConfigError("sampler.walk_jump.beta", "must be > 0");
    if (sp.steps < 1) throw ConfigError("sampler.walk_jump.steps", "must be >= 1");
    if (sp.thin < 1) throw ConfigError("sampler.walk_jump.thin", "must be >= 1");
    if (sp.burn_in < 0 || sp.burn_in >= sp.steps)
      throw ConfigError("sampler.walk_jump.burn_in", "must lie in [0, steps)");
    if (!(sp.smoothing > 0)) throw ConfigError("sampler.walk_jump.smoothing", "must be > 0");
  }
}

// ---- value block ---------------------------------------------------------

struct ValueSpec {
  std::string kind = "exact";
  double alpha = kNaN;  // defaults to the sampler alpha (1 when that is 0)
  FitOptions fit;
};

ValueSpec value_spec(const ExperimentConfig& cfg, double sampler_alpha, ModelKind model) {
  ValueSpec v;
  v.kind = model == ModelKind::gaussian ? "closed_form" : "exact";
  if (cfg.doc.contains("value")) {
    const json& j = cfg.doc.at("value");
    v.kind = get<std::string>(j, "kind", "value", v.kind);
    v.alpha = get<double>(j, "alpha", "value", kNaN);
    v.fit.rollouts = get<std::int64_t>(j, "rollouts", "value", v.fit.rollouts);
    v.fit.iterations = get<int>(j, "iterations", "value", v.fit.iterations);
    const auto space = get<std::string>(j, "space", "value", "exp");
    if (space == "exp") v.fit.space = FitSpace::exp_space;
    else if (space == "log") v.fit.space = FitSpace::log_space;
    else throw ConfigError("value.space", "must be exp or log");
  }
  if (std::isnan(v.alpha)) v.alpha = sampler_alpha > 0 ? sampler_alpha : 1.0;
  if (!(v.alpha > 0)) throw ConfigError("value.alpha", "must be > 0");
  v.fit.seed = cfg.seed;
  v.fit.threads = cfg.threads;
  static const std::set<std::string> masked_kinds{"exact", "posterior_mean", "mc_regression", "fqi"};
  static const std::set<std::string> gauss_kinds{"closed_form", "posterior_mean"};
  if (model == ModelKind::masked && !masked_kinds.count(v.kind))
    throw ConfigError("value.kind", "'" + v.kind + "' is not available for masked models");
  if (model == ModelKind::gaussian && !gauss_kinds.count(v.kind))
    throw ConfigError("value.kind", "'" + v.kind + "' is not available for gaussian models");
  if (v.fit.rollouts < 1) throw ConfigError("value.rollouts", "must be >= 1");
  if (v.fit.iterations < 1) throw ConfigError("value.iterations", "must be >= 1");
  return v;
}

DiscreteValueModel masked_values(const Built& b, const ValueSpec& v) {
  if (v.kind == "exact") return ExactDiscreteValues(*b.masked, *b.reward, v.alpha).model();
  if (v.kind == "posterior_mean") return posterior_mean_model(*b.masked, *b.reward);
  if (v.kind == "mc_regression") return mc_regression_fit(*b.masked, *b.reward, v.alpha, v.fit).model();
  return soft_q_fit(*b.masked, *b.reward, v.alpha, v.fit).model();
}

ContinuousValueModel gaussian_values(const Built& b, const ValueSpec& v) {
  if (v.kind == "posterior_mean") return posterior_mean_model(*b.gaussian, *b.reward);
  if (b.reward->kind() != RewardKind::linear)
    throw ConfigError("value.kind", "closed_form values need a linear reward");
  return gaussian_linear_value_model(*b.gaussian, b.linear_c, b.linear_offset, v.alpha);
}

// ---- running one configuration ------------------------------------------

struct RunResult {
  std::vector<std::string> samples;       // serialized states
  std::vector<double> log_weights;
  std::vector<double> rewards;
  std::vector<double> ess_trace;
  int T = 0;
  MetricsSummary metrics;
  double log_normalizer = kNaN;
  double rejection = kNaN;
  std::size_t resample_events = 0;
  double oracle_mean_reward = kNaN;
  double max_manifold_error = kNaN;
  double wall_clock = 0.0;
};

template <class S>
void absorb(RunResult& out, const SamplerReport<S>& rep) {
  for (const auto& x : rep.states) out.samples.push_back(state_text(x));
  out.log_weights = rep.log_weights;
  out.rewards = rep.rewards;
  out.ess_trace = rep.ess_trace;
  out.log_normalizer = rep.log_normalizer;
  out.rejection = rep.candidate_rejection_rate;
  out.resample_events = rep.resample_steps.size();
}

template <class P>
SamplerReport<typename P::State> run_common(const P& process, const ValueModel<typename P::State>& v,
                                            const RewardModel& r, const SamplerSpec& sp,
                                            const TransitionKernel<typename P::State>* q,
                                            std::vector<int>* root_visits) {
  using S = typename P::State;
  if (sp.algorithm == "pretrained") return sample_pretrained(process, r, sp.g);
  if (sp.algorithm == "smc") return smc_guidance(process, v, r, sp.g, q);
  if (sp.algorithm == "svdd") return svdd(process, v, r, sp.g, q);
  if (sp.algorithm == "nested_smc") return nested_smc(process, v, r, sp.g, q);
  if (sp.algorithm == "beam_search") return beam_search(process, v, r, sp.g, q);
  if (sp.algorithm == "mcts") {
    auto m = mcts_denoise(process, v, r, sp.search, sp.g, q);
    if (root_visits) *root_visits = m.root_visits;
    return m.report;
  }
  if (sp.algorithm == "best_of_n") {
    SamplerReport<S> rep;
    for (int run = 0; run < sp.runs; ++run) {
      auto b = best_of_n(process, r, sp.g.N, sp.g.seed + static_cast<std::uint64_t>(run), sp.g.threads);
      rep.states.push_back(b.best);
    }
    rep.ess_trace.assign(process.horizon() + 1, static_cast<double>(sp.runs));
    detail::finish_report(rep, r, std::chrono::steady_clock::now());
    return rep;
  }
  throw ConfigError("sampler.algorithm", "unknown algorithm '" + sp.algorithm + "'");
}

RunResult run_masked(const Built& b, const SamplerSpec& sp, const ValueSpec& vs) {
  const auto& p = *b.masked;
  const auto v = masked_values(b, vs);
  std::optional<TransitionKernel<DiscreteSequence>> q;
  if (sp.proposal == "guided")
    q = guided_discrete_kernel(p, v, vs.alpha, DiscreteGuidanceMode::exact);
  SamplerReport<DiscreteSequence> rep;
  if (sp.algorithm == "discrete_exact") rep = discrete_guidance_exact(p, v, *b.reward, sp.g);
  else if (sp.algorithm == "discrete_taylor") rep = discrete_guidance_taylor(p, v, *b.reward, sp.g);
  else rep = run_common(p, v, *b.reward, sp, q ? &*q : nullptr, nullptr);
  RunResult out;
  absorb(out, rep);
  out.T = p.horizon();
  std::optional<OracleTarget> oracle;
  if (sp.g.alpha > 0) {
    oracle = brute_force_target(p.terminal_law(), *b.reward, sp.g.alpha);
    out.oracle_mean_reward = 0.0;
    for (std::int64_t i = 0; i < oracle->table.size(); ++i)
      out.oracle_mean_reward += oracle->table.prob[i] * b.reward->eval(oracle->table.sequence(i));
  }
  out.metrics = report_metrics(rep.states, *b.reward, oracle ? &*oracle : nullptr, rep.log_weights);
  out.wall_clock = rep.wall_clock;
  return out;
}

RunResult run_gaussian(const Built& b, const SamplerSpec& sp, const ValueSpec& vs) {
  const auto& p = *b.gaussian;
  RunResult out;
  out.T = p.horizon();
  if (sp.algorithm == "walk_jump") {
    if (!b.reward->differentiable())
      throw ConfigError("reward.kind", "walk_jump needs a differentiable reward");
    const auto smooth = p.data().smoothed(sp.smoothing);
    const ScoreFn score = [&smooth](const Eigen::VectorXd& y) { return smooth.score(y); };
    Rng rng = make_stream(sp.g.seed, Stream::misc, 0);
    const auto t0 = std::chrono::steady_clock::now();
    const auto chain = walk_jump(score, *b.reward, sp.g.alpha, sp.beta, sp.steps,
                                 Eigen::VectorXd::Zero(p.dim()), rng);
    std::vector<ContinuousState> kept;
    for (long s = sp.burn_in; s <= sp.steps; s += sp.thin) kept.push_back(chain.row(s).transpose());
    for (const auto& x : kept) {
      out.samples.push_back(state_text(x));
      out.rewards.push_back(b.reward->eval(x));
    }
    out.log_weights.assign(kept.size(), 0.0);
    out.metrics = report_metrics(kept, *b.reward);
    out.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.T = 0;
    return out;
  }
  const auto v = gaussian_values(b, vs);
  std::optional<TransitionKernel<ContinuousState>> q;
  if (sp.proposal == "guided") q = guided_gaussian_kernel(p, v, vs.alpha);
  SamplerReport<ContinuousState> rep;
  if (sp.algorithm == "classifier_guidance") rep = classifier_guidance_continuous(p, v, *b.reward, sp.g);
  else rep = run_common(p, v, *b.reward, sp, q ? &*q : nullptr, nullptr);
  absorb(out, rep);
  out.metrics = report_metrics(rep.states, *b.reward, rep.log_weights);
  if (p.dim() == 1 && sp.g.alpha > 0 && std::isfinite(sp.g.alpha)) {
    // tilted data law on a grid; the model law matches it as T grows
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& c : p.data().components) {
      const double sd = std::sqrt(c.var[0]);
      lo = std::min(lo, c.mean[0] - 12 * sd - 12);
      hi = std::max(hi, c.mean[0] + 12 * sd + 12);
    }
    const auto g = brute_force_target_grid(p.data(), *b.reward, sp.g.alpha, lo, hi);
    out.oracle_mean_reward = 0.0;
    for (std::size_t i = 0; i < g.points.size(); ++i) {
      Eigen::VectorXd x(1);
      x << g.points[i];
      out.oracle_mean_reward += g.prob[i] * b.reward->eval(x);
    }
  }
  out.wall_clock = rep.wall_clock;
  return out;
}

RunResult run_so3(const Built& b, const SamplerSpec& sp) {
  const auto res = classifier_guidance_so3(*b.so3, *b.reward, sp.g, sp.guided);
  RunResult out;
  absorb(out, res.report);
  out.T = b.so3->T;
  out.max_manifold_error = res.max_manifold_error;
  out.metrics.count = res.report.states.size();
  out.metrics.mean_reward = res.report.mean_reward;
  out.metrics.max_reward = res.report.max_reward;
  double var = 0.0;
  for (double r : res.report.rewards) var += (r - out.metrics.mean_reward) * (r - out.metrics.mean_reward);
  out.metrics.std_reward = std::sqrt(var / static_cast<double>(res.report.rewards.size()));
  out.wall_clock = res.report.wall_clock;
  return out;
}

RunResult run_once(const ExperimentConfig& cfg) {
  const auto b = build(cfg.doc);
  const auto sp = sampler_spec(cfg);
  check_sampler(sp, b->kind);
  if (b->kind == ModelKind::so3) return run_so3(*b, sp);
  const auto vs = value_spec(cfg, sp.g.alpha, b->kind);
  if (b->kind == ModelKind::masked) return run_masked(*b, sp, vs);
  return run_gaussian(*b, sp, vs);
}

double reward_se(const RunResult& r) {
  const double n = static_cast<double>(r.metrics.count);
  return n > 1 ? r.metrics.std_reward / std::sqrt(n) : kNaN;
}

double ess_min(const RunResult& r) {
  if (r.ess_trace.empty()) return kNaN;
  return *std::min_element(r.ess_trace.begin(), r.ess_trace.end());
}

double ess_mean(const RunResult& r) {
  if (r.ess_trace.empty()) return kNaN;
  double s = 0.0;
  for (double e : r.ess_trace) s += e;
  return s / static_cast<double>(r.ess_trace.size());
}

std::vector<std::string> summary_values(const ExperimentConfig& cfg, const SamplerSpec& sp,
                                        const RunResult& r) {
  const auto& m = r.metrics;
  return {get<std::string>(cfg.doc, "name", "", "experiment"),
          cfg.doc.at("model").at("kind").get<std::string>(),
          sp.algorithm,
          std::to_string(cfg.seed),
          std::to_string(sp.g.N),
          std::to_string(sp.g.M),
          num(sp.g.alpha),
          std::to_string(m.count),
          num(m.mean_reward),
          num(m.max_reward),
          num(m.std_reward),
          num(reward_se(r)),
          num(m.diversity),
          num(m.duplicate_fraction),
          num(m.tv_to_oracle.value_or(kNaN)),
          num(m.kl_to_oracle.value_or(kNaN)),
          num(r.oracle_mean_reward),
          num(r.log_normalizer),
          num(ess_min(r)),
          std::to_string(r.resample_events),
          num(r.rejection),
          num(r.max_manifold_error)};
}

std::string join(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
  return s + "\n";
}

void set_parameter(json& doc, const std::string& name, double value) {
  json& s = doc["sampler"];
  if (name == "alpha" || name == "ess_threshold") {
    s[name] = value;
  } else if (name == "N" || name == "M") {
    s[name] = static_cast<int>(value);
  } else if (name == "exploration_c") {
    s["search"][name] = value;
  } else {
    s["search"][name] = static_cast<int>(value);
  }
}

int line_of(const std::string& source, const std::string& field) {
  // Walk the dotted path, searching each key after the previous match.
  std::size_t pos = 0;
  bool found = false;
  std::string rest = field;
  while (!rest.empty()) {
    const auto dot = rest.find('.');
    std::string key = rest.substr(0, dot);
    rest = dot == std::string::npos ? "" : rest.substr(dot + 1);
    const auto br = key.find('[');
    if (br != std::string::npos) key = key.substr(0, br);
    const auto at = source.find("\"" + key + "\"", pos);
    if (at == std::string::npos) break;
    pos = at;
    found = true;
  }
  if (!found) return 1;
  return 1 + static_cast<int>(std::count(source.begin(), source.begin() + pos, '\n'));
}

}  // namespace

const std::vector<std::string>& summary_columns() {
  static const std::vector<std::string> cols{
      "name",          "model",          "algorithm",      "seed",         "N",
      "M",             "alpha",          "count",          "mean_reward",  "max_reward",
      "std_reward",    "reward_se",      "diversity",      "duplicate_fraction",
      "tv_to_oracle",  "kl_to_oracle",   "oracle_mean_reward", "log_normalizer",
      "ess_min",       "resample_events", "candidate_rejection_rate", "max_manifold_error"};
  return cols;
}

ExperimentConfig parse_config(const std::string& text, const std::string& path) {
  ExperimentConfig cfg;
  cfg.source = text;
  cfg.path = path;
  try {
    cfg.doc = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("<syntax>", e.what());
  }
  if (!cfg.doc.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  cfg.seed = get<std::uint64_t>(cfg.doc, "seed", "", 0);
  if (cfg.doc.contains("output"))
    cfg.out_dir = get<std::string>(cfg.doc.at("output"), "dir", "output", cfg.out_dir);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::invalid_argument, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

void validate_config(const ExperimentConfig& cfg) {
  const auto b = build(cfg.doc);
  const auto sp = sampler_spec(cfg);
  check_sampler(sp, b->kind);
  if (b->kind != ModelKind::so3) value_spec(cfg, sp.g.alpha, b->kind);
  if (cfg.doc.contains("sweep")) {
    const json& s = cfg.doc.at("sweep");
    const auto param = require_field<std::string>(s, "parameter", "sweep");
    if (std::find(kSweepParameters.begin(), kSweepParameters.end(), param) == kSweepParameters.end())
      throw ConfigError("sweep.parameter", "unknown parameter '" + param + "'");
    const auto grid = require_field<std::vector<double>>(s, "grid", "sweep");
    if (grid.empty()) throw ConfigError("sweep.grid", "must not be empty");
  }
}

std::string diagnostic(const ExperimentConfig& cfg, const std::string& field,
                       const std::string& message) {
  return cfg.path + ":" + std::to_string(line_of(cfg.source, field)) + ": error: " + message;
}

std::vector<Artifact> run_experiment(const ExperimentConfig& cfg) {
  validate_config(cfg);
  const auto sp = sampler_spec(cfg);
  const auto r = run_once(cfg);
  std::vector<Artifact> out;
  out.push_back({"summary.csv", join(summary_columns()) + join(summary_values(cfg, sp, r))});
  std::string trace = "step,t,ess\n";
  for (std::size_t k = 0; k < r.ess_trace.size(); ++k)
    trace += std::to_string(k) + "," + std::to_string(r.T - static_cast<int>(k)) + "," +
             num(r.ess_trace[k]) + "\n";
  out.push_back({"trace.csv", trace});
  std::string samples = "index,state,log_weight,reward\n";
  for (std::size_t i = 0; i < r.samples.size(); ++i)
    samples += std::to_string(i) + "," + r.samples[i] + "," + num(r.log_weights[i]) + "," +
               num(r.rewards[i]) + "\n";
  out.push_back({"samples.csv", samples});
  return out;
}

std::vector<Artifact> run_sweep(const ExperimentConfig& cfg,
                                const std::optional<std::string>& parameter,
                                const std::optional<std::vector<double>>& grid) {
  std::string param;
  std::vector<double> values;
  if (parameter) {
    param = *parameter;
  } else {
    param = require_field<std::string>(member(cfg.doc, "sweep", "sweep"), "parameter", "sweep");
  }
  if (std::find(kSweepParameters.begin(), kSweepParameters.end(), param) == kSweepParameters.end())
    throw ConfigError("sweep.parameter", "unknown parameter '" + param + "'");
  if (grid) values = *grid;
  else values = require_field<std::vector<double>>(member(cfg.doc, "sweep", "sweep"), "grid", "sweep");
  if (values.empty()) throw ConfigError("sweep.grid", "must not be empty");

  std::vector<ExperimentConfig> points(values.size(), cfg);
  for (std::size_t i = 0; i < values.size(); ++i) {
    set_parameter(points[i].doc, param, values[i]);
    points[i].threads = 1;
    validate_config(points[i]);
  }
  std::vector<RunResult> results(values.size());
  std::vector<double> wall(values.size());
  parallel_for(values.size(), cfg.threads, [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    results[i] = run_once(points[i]);
    wall[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });
  std::vector<std::string> header{"parameter", "value"};
  for (const auto& c : summary_columns()) header.push_back(c);
  header.push_back("ess_mean");
  header.push_back("wall_clock");
  std::string csv = join(header);
  std::string plot = "# " + param + " mean_reward\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::vector<std::string> row{param, num(values[i])};
    for (auto& c : summary_values(points[i], sampler_spec(points[i]), results[i])) row.push_back(c);
    row.push_back(num(ess_mean(results[i])));
    row.push_back(num(wall[i]));
    csv += join(row);
    plot += num(values[i]) + " " + num(results[i].metrics.mean_reward) + "\n";
  }
  return {{"sweep.csv", csv}, {"sweep_plot.dat", plot}};
}

std::vector<Artifact> run_oracle(const ExperimentConfig& cfg) {
  validate_config(cfg);
  const auto b = build(cfg.doc);
  const auto sp = sampler_spec(cfg);
  const double alpha = sp.g.alpha > 0 ? sp.g.alpha : 1.0;
  std::ostringstream os;
  if (b->kind == ModelKind::masked) {
    const auto o = brute_force_target(b->masked->terminal_law(), *b->reward, alpha);
    os << "# alpha=" << num(alpha) << " logZ=" << num(o.logZ) << "\n";
    export_oracle_csv(o, os);
  } else if (b->kind == ModelKind::gaussian && b->gaussian->dim() == 1) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& c : b->gaussian->data().components) {
      lo = std::min(lo, c.mean[0] - 12 * std::sqrt(c.var[0]) - 12);
      hi = std::max(hi, c.mean[0] + 12 * std::sqrt(c.var[0]) + 12);
    }
    const auto g = brute_force_target_grid(b->gaussian->data(), *b->reward, alpha, lo, hi);
    os << "# alpha=" << num(alpha) << " logZ=" << num(g.logZ) << " mean=" << num(g.mean())
       << " variance=" << num(g.variance()) << "\n";
    os << "x,prob\n";
    for (std::size_t i = 0; i < g.points.size(); ++i) os << num(g.points[i]) << ',' << num(g.prob[i]) << '\n';
  } else {
    throw ConfigError("model.kind", "oracle tables exist for masked and 1-D gaussian models only");
  }
  return {{"oracle.csv", os.str()}};
}

std::vector<Artifact> run_distill(const ExperimentConfig& cfg) {
  validate_config(cfg);
  const auto b = build(cfg.doc);
  if (b->kind != ModelKind::masked) throw ConfigError("model.kind", "distillation needs a masked model");
  const auto sp = sampler_spec(cfg);
  if (!(sp.g.alpha > 0)) throw ConfigError("sampler.alpha", "distillation needs alpha > 0");
  const auto vs = value_spec(cfg, sp.g.alpha, b->kind);
  const auto v = masked_values(*b, vs);
  const json& d = member(cfg.doc, "distill", "distill");
  const auto objective = get<std::string>(d, "objective", "distill", "kl");
  const auto rollin_name = get<std::string>(d, "rollin", "distill", "teacher");
  const int teacher_M = get<int>(d, "teacher_M", "distill", 8);
  const auto n = get<std::int64_t>(d, "trajectories", "distill", 10000);
  const int rounds = get<int>(d, "rounds", "distill", 1);
  OptimizeOptions opt;
  opt.lr = get<double>(d, "lr", "distill", 0.0);
  opt.max_steps = get<int>(d, "steps", "distill", opt.max_steps);
  if (objective != "kl" && objective != "pcl" && objective != "inverse_kl")
    throw ConfigError("distill.objective", "must be kl, pcl or inverse_kl");
  if (teacher_M < 1) throw ConfigError("distill.teacher_M", "must be >= 1");
  if (n < 1) throw ConfigError("distill.trajectories", "must be >= 1");
  if (rounds < 1) throw ConfigError("distill.rounds", "must be >= 1");
  if (opt.lr < 0) throw ConfigError("distill.lr", "must be >= 0");
  RollinSpec spec;
  if (rollin_name == "teacher") spec.kind = RollinKind::teacher;
  else if (rollin_name == "student") spec.kind = RollinKind::student;
  else if (rollin_name == "forward_recycle") spec.kind = RollinKind::forward_recycle;
  else throw ConfigError("distill.rollin", "must be teacher, student or forward_recycle");
  spec.mix = get<double>(d, "mix", "distill", 1.0);
  if (spec.mix < 0 || spec.mix > 1) throw ConfigError("distill.mix", "must lie in [0, 1]");

  const auto& p = *b->masked;
  const double alpha = vs.alpha;
  const auto teacher = svdd_step_kernel(p, v, alpha, teacher_M);
  if (spec.kind == RollinKind::forward_recycle) {
    Rng rng = make_stream(cfg.seed, Stream::misc, 1);
    for (std::int64_t i = 0; i < n; ++i)
      spec.dataset.push_back(p.data().sequence(sample_categorical(p.data().prob, rng)));
  }
  TabularPolicy student(p);
  std::size_t cells = 0;
  for (int round = 0; round < rounds; ++round) {
    const std::uint64_t seed = cfg.seed + 1000003ull * static_cast<std::uint64_t>(round);
    const auto states = make_rollin(spec, teacher, student, p, static_cast<std::size_t>(n), seed);
    std::vector<RollinState> unique;
    std::set<std::pair<int, std::int64_t>> seen;
    for (const auto& s : states)
      if (seen.insert({s.t, encode_state(s.x)}).second) unique.push_back(s);
    cells = unique.size();
    if (objective == "kl") {
      distill_kl(teacher_transitions(states, teacher, seed + 7), student);
    } else if (objective == "pcl") {
      const auto batch = support_batch(student, unique);
      OptimizeOptions o = opt;
      if (o.lr == 0) o.lr = 0.5 * static_cast<double>(batch.size()) / static_cast<double>(unique.size());
      pcl_optimize(student, v, alpha, batch, o);
    } else {
      const double lr = opt.lr == 0 ? 2.0 : opt.lr;
      for (int s = 0; s < opt.max_steps; ++s)
        if (distill_inverse_kl_step(student, v, alpha, unique, lr) < opt.grad_tol) break;
    }
  }
  const auto law = student.terminal_law();
  const auto oracle = brute_force_target(p.terminal_law(), *b->reward, alpha);
  std::vector<DiscreteSequence> finals;
  for (const auto& tr : kernel_trajectories(p, teacher, static_cast<std::size_t>(n), cfg.seed + 99))
    finals.push_back(tr.back());
  const auto teacher_law = empirical_table(finals, p.K(), p.L());
  const auto reach = reachable_cells(p);
  std::ostringstream os;
  student.export_table(os);
  std::string summary =
      "objective,rollin,cells,tv_to_teacher,tv_to_oracle,max_row_tv_to_optimal\n" + objective + "," +
      rollin_name + "," + std::to_string(cells) + "," + num(tv_distance(law, teacher_law)) + "," +
      num(tv_distance(law, oracle.table)) + "," + num(max_row_tv_to_optimal(student, v, alpha, reach)) +
      "\n";
  return {{"student.csv", os.str()}, {"distill_summary.csv", summary}};
}

std::vector<Artifact> run_refine(const ExperimentConfig& cfg) {
  validate_config(cfg);
  const auto b = build(cfg.doc);
  const auto sp = sampler_spec(cfg);
  const json& r = member(cfg.doc, "refine", "refine");
  const int k = get<int>(r, "k", "refine", 1);
  const int iters = get<int>(r, "iterations", "refine", 10);
  const double maxd = get<double>(r, "max_distance", "refine", std::numeric_limits<double>::infinity());
  std::ostringstream csv, it;
  it << "iteration,state,reward\n";
  auto inner_cfg = sp;
  inner_cfg.g.threads = 1;
  if (b->kind == ModelKind::masked) {
    const auto& p = *b->masked;
    if (k < 0 || k > p.horizon() + 1) throw ConfigError("refine.k", "must lie in [0, T+1]");
    if (iters < 0) throw ConfigError("refine.iterations", "must be >= 0");
    DiscreteSequence seed_x;
    try {
      seed_x = DiscreteSequence::parse(require_field<std::string>(r, "seed_sequence", "refine"), p.K());
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError("refine.seed_sequence", e.what());
    }
    if (seed_x.length() != p.L() || seed_x.masked_count() > 0)
      throw ConfigError("refine.seed_sequence", "must be a clean sequence of length L");
    const auto vs = value_spec(cfg, sp.g.alpha, b->kind);
    const auto v = masked_values(*b, vs);
    InnerSampler<DiscreteSequence> inner = [&](const DiscreteSequence& x, int kk, std::uint64_t s) {
      auto g = inner_cfg;
      g.g.seed = s;
      std::optional<SamplerStart<DiscreteSequence>> start;
      if (kk <= p.horizon()) start = SamplerStart<DiscreteSequence>{x, kk};
      SamplerReport<DiscreteSequence> rep;
      if (g.algorithm == "svdd") rep = svdd(p, v, *b->reward, g.g, nullptr, start);
      else if (g.algorithm == "beam_search") rep = beam_search(p, v, *b->reward, g.g, nullptr, start);
      else if (g.algorithm == "smc") rep = smc_guidance(p, v, *b->reward, g.g, nullptr, start);
      else if (g.algorithm == "nested_smc") rep = nested_smc(p, v, *b->reward, g.g, nullptr, start);
      else if (g.algorithm == "discrete_exact") rep = discrete_guidance_exact(p, v, *b->reward, g.g, start);
      else if (g.algorithm == "discrete_taylor") rep = discrete_guidance_taylor(p, v, *b->reward, g.g, start);
      else rep = sample_with_kernel(p, pretrained_kernel(p), *b->reward, g.g, start);
      return rep.states[detail::argmax_lowest(rep.rewards)];
    };
    RefineConfig<DiscreteSequence> rc;
    rc.k = k;
    rc.iterations = iters;
    rc.seed = cfg.seed;
    rc.max_distance = maxd;
    rc.distance = [seed_x](const DiscreteSequence& x) { return double(change_count(x, seed_x)); };
    const auto res = iterative_refine(p, inner, seed_x, *b->reward, rc);
    export_refine_csv(res, csv);
    for (std::size_t s = 0; s < res.iterates.size(); ++s)
      it << s << ',' << res.iterates[s].str() << ',' << num(res.rewards[s]) << '\n';
  } else if (b->kind == ModelKind::gaussian) {
    const auto& p = *b->gaussian;
    if (k < 0 || k > p.horizon() + 1) throw ConfigError("refine.k", "must lie in [0, T+1]");
    const Eigen::VectorXd seed_x = vector_field(r, "seed_state", "refine");
    if (seed_x.size() != p.dim()) throw ConfigError("refine.seed_state", "dimension mismatch");
    const auto vs = value_spec(cfg, sp.g.alpha, b->kind);
    const auto v = gaussian_values(*b, vs);
    InnerSampler<ContinuousState> inner = [&](const ContinuousState& x, int kk, std::uint64_t s) {
      auto g = inner_cfg;
      g.g.seed = s;
      std::optional<SamplerStart<ContinuousState>> start;
      if (kk <= p.horizon()) start = SamplerStart<ContinuousState>{x, kk};
      SamplerReport<ContinuousState> rep;
      if (g.algorithm == "svdd") rep = svdd(p, v, *b->reward, g.g, nullptr, start);
      else if (g.algorithm == "beam_search") rep = beam_search(p, v, *b->reward, g.g, nullptr, start);
      else if (g.algorithm == "smc") rep = smc_guidance(p, v, *b->reward, g.g, nullptr, start);
      else {
        const auto q = guided_gaussian_kernel(p, v, vs.alpha);
        rep = sample_with_kernel(p, g.algorithm == "classifier_guidance" ? q : pretrained_kernel(p),
                                 *b->reward, g.g, start);
      }
      return rep.states[detail::argmax_lowest(rep.rewards)];
    };
    RefineConfig<ContinuousState> rc;
    rc.k = k;
    rc.iterations = iters;
    rc.seed = cfg.seed;
    rc.max_distance = maxd;
    rc.distance = [seed_x](const ContinuousState& x) { return (x - seed_x).norm(); };
    const auto res = iterative_refine(p, inner, seed_x, *b->reward, rc);
    export_refine_csv(res, csv);
    for (std::size_t s = 0; s < res.iterates.size(); ++s)
      it << s << ',' << state_text(res.iterates[s]) << ',' << num(res.rewards[s]) << '\n';
  } else {
    throw ConfigError("model.kind", "refinement needs a masked or gaussian model");
  }
  return {{"refine.csv", csv.str()}, {"refine_iterates.csv", it.str()}};
}

void write_artifacts(const std::string& out_dir, const std::vector<Artifact>& artifacts) {
  std::filesystem::create_directories(out_dir);
  for (const auto& a : artifacts) {
    std::ofstream f(std::filesystem::path(out_dir) / a.filename, std::ios::binary);
    if (!f) throw Error(Errc::invalid_argument, "cannot write " + a.filename);
    f << a.content;
  }
}

}  // namespace dalign::cli
