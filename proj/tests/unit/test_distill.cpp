#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "dalign/core/error.hpp"
#include "dalign/distill/distill.hpp"
#include "dalign/values/discrete_values.hpp"
#include "fixtures.hpp"

using namespace dalign;

namespace {

double row_tv(const std::vector<double>& a, const std::vector<double>& b) {
  return fixtures::tv(a, b);
}

std::vector<double> pre_probs(const TabularPolicy& pol, int t, const DiscreteSequence& x) {
  return pol.pretrained_row(t, x).probs();
}

}  // namespace

TEST_SUITE("distill") {

TEST_CASE("tabular policy starts at the pre-trained kernel") {
  auto p = fixtures::tiny_process();
  TabularPolicy pol(p);
  for (const auto& c : reachable_cells(p)) {
    auto& row = pol.row(c.t, c.x);
    double total = 0.0;
    for (std::size_t j = 0; j < row.next.size(); ++j) {
      const auto y = decode_state(row.next[j], 2, 2);
      CHECK(pol.logprob(y, c.x, c.t) == doctest::Approx(p.step_logprob(y, c.x, c.t)).epsilon(1e-12));
      total += std::exp(pol.logprob(y, c.x, c.t));
    }
    CHECK(std::abs(total - 1.0) < 1e-10);
  }
  CHECK(tv_distance(pol.terminal_law(), p.terminal_law()) < 1e-12);

  std::ostringstream os;
  pol.export_table(os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "t,state,next_state,prob");
  std::getline(is, line);
  CHECK(line.rfind("1,", 0) == 0);
}

TEST_CASE("roll-in distributions") {
  auto p = fixtures::tiny_process();
  TabularPolicy student(p);
  const auto pre = pretrained_kernel(p);

  RollinSpec rec;
  rec.kind = RollinKind::forward_recycle;
  CHECK_THROWS_AS(make_rollin(rec, pre, student, p, 1, 0), Error);
  // linear schedule with T = 8 crosses 0.5 between steps; build one that hits it
  MaskedProcess half(DistributionTable::from_masses(2, 4, std::vector<double>(16, 1.0 / 16)),
                     NoiseSchedule::from_alpha_bar({1.0, 0.5, 0.1}));
  TabularPolicy hs(half);
  Rng g(1);
  for (int i = 0; i < 100000; ++i) {
    DiscreteSequence x{{0, 0, 0, 0}, 2};
    for (auto& tok : x.tokens) tok = uniform01(g) < 0.5;
    rec.dataset.push_back(x);
  }
  rec.recycle_step = 1;
  auto states = make_rollin(rec, pretrained_kernel(half), hs, half, 0, 2);
  CHECK(states.size() == 100000);
  std::vector<double> freq(4, 0.0);
  for (const auto& s : states) {
    CHECK(s.t == 1);
    for (int l = 0; l < 4; ++l) freq[l] += s.x.is_masked(l) / 100000.0;
  }
  for (double f : freq) CHECK(std::abs(f - 0.5) < 4 * std::sqrt(0.25 / 100000));

  RollinSpec stud;
  stud.kind = RollinKind::student;
  auto a = make_rollin(stud, pre, student, p, 500, 3);
  const auto trajs = kernel_trajectories(p, pre, 500, 3);
  REQUIRE(a.size() == 500u * 8u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& tr = trajs[i / 8];
    CHECK(a[i].x == tr[i % 8]);
    CHECK(a[i].t == 8 - static_cast<int>(i % 8));
  }

  const auto v = ExactDiscreteValues(p, fixtures::tiny_reward(), 1.0).model();
  const auto teacher = svdd_step_kernel(p, v, 1.0, 8);
  RollinSpec t1;
  t1.kind = RollinKind::teacher;
  t1.mix = 1.0;
  auto b = make_rollin(t1, teacher, student, p, 300, 4);
  const auto tt = kernel_trajectories(p, teacher, 300, 4);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(b[i].x == tt[i / 8][i % 8]);
  t1.mix = 1.5;
  CHECK_THROWS_AS(make_rollin(t1, teacher, student, p, 1, 0), Error);
}

TEST_CASE("forward KL is the per-cell empirical frequency") {
  auto p = fixtures::tiny_process();
  TabularPolicy pol(p);
  const auto root = fully_masked(2, 2);
  std::vector<Transition> batch;
  const char* nexts[] = {"__", "A_", "A_", "_B", "AB"};
  for (auto s : nexts) batch.push_back({8, root, DiscreteSequence::parse(s, 2)});
  auto st = distill_kl(batch, pol);
  CHECK(st.visited_cells == 1);
  const auto& row = *pol.find(8, root);
  const auto probs = row.probs();
  std::map<std::string, double> want{{"__", 0.2}, {"A_", 0.4}, {"_B", 0.2}, {"AB", 0.2}};
  const double denom = 5 + 1e-9 * row.next.size();
  for (std::size_t j = 0; j < row.next.size(); ++j) {
    const auto s = decode_state(row.next[j], 2, 2).str();
    const double c = want.count(s) ? want[s] * 5 : 0.0;
    CHECK(probs[j] == doctest::Approx((c + 1e-9) / denom).epsilon(1e-12));
  }
  // cells without transitions stay pre-trained
  CHECK(pol.find(7, root) == nullptr);
}

TEST_CASE("self-distillation recovers the pre-trained rows") {
  auto p = fixtures::tiny_process();
  TabularPolicy pol(p);
  const auto pre = pretrained_kernel(p);
  const auto trajs = kernel_trajectories(p, pre, 100000, 5);
  const auto trans = trajectory_transitions(trajs);
  distill_kl(trans, pol);
  std::map<std::pair<int, std::int64_t>, int> visits;
  for (const auto& tr : trans) ++visits[{tr.t, encode_state(tr.x)}];
  int checked = 0;
  for (const auto& [key, n] : visits) {
    if (n < 100000) continue;
    const auto x = decode_state(key.second, 2, 2);
    CHECK(row_tv(pol.find(key.first, x)->probs(), pre_probs(pol, key.first, x)) < 0.02);
    ++checked;
  }
  CHECK(checked >= 1);
}

TEST_CASE("forward KL student of an svdd teacher") {
  auto p = fixtures::tiny_process();
  const auto r = fixtures::tiny_reward();
  const auto v = ExactDiscreteValues(p, r, 1.0).model();
  const auto teacher = svdd_step_kernel(p, v, 1.0, 8);
  TabularPolicy student(p);
  distill_kl(trajectory_transitions(kernel_trajectories(p, teacher, 100000, 6)), student);
  // fresh teacher samples estimate the teacher-induced law
  std::vector<DiscreteSequence> finals;
  for (const auto& tr : kernel_trajectories(p, teacher, 100000, 7)) finals.push_back(tr.back());
  CHECK(tv_distance(student.terminal_law(), empirical_table(finals, 2, 2)) < 0.05);
}

TEST_CASE("path consistency") {
  auto p = fixtures::tiny_process();
  const auto r = fixtures::tiny_reward();
  const double alpha = 0.5;
  const auto v = ExactDiscreteValues(p, r, alpha).model();
  const auto cells = reachable_cells(p);

  TabularPolicy opt(p);
  for (const auto& c : cells) opt.row(c.t, c.x) = soft_optimal_row(p, v, alpha, c.t, c.x);
  const auto batch = support_batch(opt, cells);
  CHECK(pcl_loss(opt, v, alpha, batch) < 1e-12);
  CHECK(tv_distance(opt.terminal_law(), brute_force_target(p.terminal_law(), r, alpha).table) <
        1e-10);

  TabularPolicy pre(p);
  CHECK(pcl_loss(pre, v, alpha, batch) > 1e-3);

  OptimizeOptions o;
  o.lr = 0.5 * static_cast<double>(batch.size()) / cells.size();
  auto res = pcl_optimize(pre, v, alpha, batch, o);
  CHECK(res.loss < 1e-6);
  CHECK(max_row_tv_to_optimal(pre, v, alpha, cells) < 0.02);
  CHECK(tv_distance(pre.terminal_law(), brute_force_target(p.terminal_law(), r, alpha).table) <
        0.05);
}

TEST_CASE("inverse KL steps") {
  auto p = fixtures::tiny_process();
  const auto r = fixtures::tiny_reward();
  const double alpha = 0.5;
  const auto v = ExactDiscreteValues(p, r, alpha).model();
  const auto cells = reachable_cells(p);

  TabularPolicy opt(p);
  for (const auto& c : cells) opt.row(c.t, c.x) = soft_optimal_row(p, v, alpha, c.t, c.x);
  CHECK(distill_inverse_kl_step(opt, v, alpha, cells, 1.0) < 1e-10);

  // with the value terms gone the step is the gradient of KL(student || pre)
  TabularPolicy a(p);
  const auto root = fully_masked(2, 2);
  auto& row = a.row(8, root);
  for (std::size_t j = 0; j < row.logits.size(); ++j) row.logits[j] += 0.3 * std::sin(double(j));
  const auto before = row.logits;
  const auto probs = row.probs();
  const auto pre = pre_probs(a, 8, root);
  double kl = 0.0;
  for (std::size_t j = 0; j < probs.size(); ++j) kl += probs[j] * std::log(probs[j] / pre[j]);
  distill_inverse_kl_step(a, v, std::numeric_limits<double>::infinity(), {{8, root}}, 1.0);
  for (std::size_t j = 0; j < probs.size(); ++j) {
    const double g = probs[j] * (std::log(probs[j] / pre[j]) - kl);
    CHECK(std::abs((before[j] - row.logits[j]) - g) < 1e-6);
  }

  TabularPolicy s(p);
  double norm = 0.0;
  for (int i = 0; i < 2000; ++i) norm = distill_inverse_kl_step(s, v, alpha, cells, 2.0);
  CHECK(norm < 1e-5);
  CHECK(max_row_tv_to_optimal(s, v, alpha, cells) < 0.02);
}

TEST_CASE("inverse KL student puts more mass on the mode than the forward KL student") {
  // bimodal target: the reward favours AA and BB, which the data also
  // prefers; the soft-optimal law is sharper than a finite-M svdd teacher
  auto p = fixtures::tiny_process();
  const auto r = RewardModel::table(2, 2, {{"AA", 1.0}, {"BB", 1.2}});
  const double alpha = 0.25;
  const auto v = ExactDiscreteValues(p, r, alpha).model();
  const auto cells = reachable_cells(p);
  const auto target = brute_force_target(p.terminal_law(), r, alpha).table;
  const auto mode = DiscreteSequence::parse("BB", 2);

  TabularPolicy fwd(p);
  const auto teacher = svdd_step_kernel(p, v, alpha, 4);
  distill_kl(trajectory_transitions(kernel_trajectories(p, teacher, 50000, 8)), fwd);

  TabularPolicy inv(p);
  for (int i = 0; i < 500; ++i) distill_inverse_kl_step(inv, v, alpha, cells, 2.0);

  const double fwd_mode = fwd.terminal_law()[mode];
  const double inv_mode = inv.terminal_law()[mode];
  CHECK(inv_mode >= fwd_mode);
  CHECK(std::abs(inv_mode - target[mode]) < 0.02);
}

TEST_CASE("a distilled student is a better svdd proposal") {
  auto p = fixtures::tiny_process();
  const auto r = fixtures::tiny_reward();
  const double alpha = 0.5;
  const auto v = ExactDiscreteValues(p, r, alpha).model();
  const auto cells = reachable_cells(p);
  TabularPolicy s(p);
  auto batch = support_batch(s, cells);
  OptimizeOptions o;
  o.lr = 0.5 * static_cast<double>(batch.size()) / cells.size();
  pcl_optimize(s, v, alpha, batch, o);
  const auto q = s.kernel();
  GuidanceConfig cfg;
  cfg.alpha = alpha;
  cfg.N = 2000;
  cfg.M = 8;
  cfg.seed = 9;
  auto with_student = svdd(p, v, r, cfg, &q);
  auto with_pre = svdd(p, v, r, cfg);
  CHECK(with_student.candidate_rejection_rate < with_pre.candidate_rejection_rate);
  CHECK(tv_distance(report_law(with_student, 2, 2),
                    brute_force_target(p.terminal_law(), r, alpha).table) < 0.05);
}

}  // TEST_SUITE
