#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dalign/cli/experiment.hpp"

using namespace dalign;
using namespace dalign::cli;

namespace {

const char* kTiny = R"({
  "name": "t",
  "seed": 4,
  "model": {
    "kind": "masked", "K": 2, "L": 2,
    "schedule": {"kind": "linear", "T": 32},
    "data": [["AA", 0.4], ["AB", 0.1], ["BA", 0.2], ["BB", 0.3]]
  },
  "reward": {"kind": "table", "entries": [["AA", 0], ["AB", 0.5], ["BA", 0.25], ["BB", 1]]},
  "sampler": {"algorithm": "smc", "alpha": 0.5, "N": 400},
  "sweep": {"parameter": "N", "grid": [100, 200, 400]}
})";

std::string content(const std::vector<Artifact>& arts, const std::string& name) {
  for (const auto& a : arts)
    if (a.filename == name) return a.content;
  FAIL("missing artifact " << name);
  return {};
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> cells(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double column(const std::string& csv, const std::string& name, std::size_t row = 1) {
  const auto ls = lines(csv);
  const auto head = cells(ls.at(0));
  const auto vals = cells(ls.at(row));
  for (std::size_t i = 0; i < head.size(); ++i)
    if (head[i] == name) return std::stod(vals.at(i));
  FAIL("missing column " << name);
  return 0;
}

std::string field_of(const std::string& text) {
  try {
    validate_config(parse_config(text));
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto at = s.find(from);
  REQUIRE(at != std::string::npos);
  return s.replace(at, from.size(), to);
}

}  // namespace

TEST_SUITE("cli_harness") {

TEST_CASE("repeated runs are byte-identical") {
  const auto cfg = parse_config(kTiny);
  const auto a = run_experiment(cfg);
  const auto b = run_experiment(cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].content == b[i].content);
}

TEST_CASE("thread count does not change results") {
  auto cfg = parse_config(kTiny);
  const auto one = run_experiment(cfg);
  cfg.threads = 4;
  const auto four = run_experiment(cfg);
  for (std::size_t i = 0; i < one.size(); ++i) CHECK(one[i].content == four[i].content);
}

TEST_CASE("summary has the documented header") {
  const auto arts = run_experiment(parse_config(kTiny));
  std::string header;
  for (const auto& c : summary_columns()) header += (header.empty() ? "" : ",") + c;
  CHECK(lines(content(arts, "summary.csv")).at(0) == header);
  CHECK(lines(content(arts, "trace.csv")).size() == 1 + 33);
  CHECK(lines(content(arts, "samples.csv")).size() == 1 + 400);
}

TEST_CASE("validation names the offending field") {
  CHECK(field_of(replace(kTiny, "\"alpha\": 0.5", "\"alpha\": 0")) == "sampler.alpha");
  CHECK(field_of(replace(kTiny, "\"alpha\": 0.5", "\"alpha\": -1")) == "sampler.alpha");
  CHECK(field_of(replace(kTiny, "\"N\": 400", "\"N\": 0")) == "sampler.N");
  CHECK(field_of(replace(kTiny, "\"K\": 2", "\"K\": 9")) == "model.K");
  CHECK(field_of(replace(kTiny, "\"smc\"", "\"walk_jump\"")) == "sampler.algorithm");
  CHECK(field_of(replace(kTiny, "\"parameter\": \"N\"", "\"parameter\": \"bogus\"")) == "sweep.parameter");
  CHECK(field_of(replace(kTiny, "[\"BB\", 0.3]", "[\"BB\", -0.3]")) == "model.data");
  CHECK(field_of(replace(kTiny, "\"table\"", "\"tabel\"")) == "reward.kind");
  CHECK(field_of(kTiny).empty());
}

TEST_CASE("diagnostic points at the field's line") {
  const auto cfg = parse_config(replace(kTiny, "\"alpha\": 0.5", "\"alpha\": 0"), "c.json");
  try {
    validate_config(cfg);
    FAIL("expected a validation error");
  } catch (const ConfigError& e) {
    const auto d = diagnostic(cfg, e.field(), e.what());
    CHECK(d.rfind("c.json:10: error:", 0) == 0);
  }
}

TEST_CASE("alpha = 0 is accepted for svdd and beam search") {
  auto text = replace(kTiny, "\"alpha\": 0.5", "\"alpha\": 0");
  CHECK(field_of(replace(text, "\"smc\"", "\"svdd\"")).empty());
  CHECK(field_of(replace(text, "\"smc\"", "\"beam_search\"")).empty());
}

TEST_CASE("tiny svdd config lands near the oracle") {
  const auto cfg = load_config(std::string(DALIGN_SOURCE_DIR) + "/configs/tiny-discrete-svdd.json");
  const auto arts = run_experiment(cfg);
  CHECK(column(content(arts, "summary.csv"), "tv_to_oracle") < 0.05);
}

TEST_CASE("sweep rows match grid and single-point runs") {
  const auto cfg = parse_config(kTiny);
  const auto sw = run_sweep(cfg);
  const auto rows = lines(content(sw, "sweep.csv"));
  CHECK(rows.size() == 1 + 3);
  CHECK(lines(content(sw, "sweep_plot.dat")).size() == 1 + 3);

  // a one-point sweep reproduces the plain run's summary cells
  const auto one = run_sweep(cfg, std::string("N"), std::vector<double>{400});
  const auto run = lines(content(run_experiment(cfg), "summary.csv")).at(1);
  const auto row = lines(content(one, "sweep.csv")).at(1);
  CHECK(row.rfind("N,400," + run + ",", 0) == 0);
}

TEST_CASE("beam-search width sweep is monotone within 2 SE") {
  auto text = replace(kTiny, "\"smc\"", "\"beam_search\"");
  text = replace(text, "\"N\": 400", "\"N\": 2000");
  const auto sw = run_sweep(parse_config(text), std::string("M"), std::vector<double>{1, 2, 4, 8, 16});
  const auto csv = content(sw, "sweep.csv");
  for (std::size_t row = 2; row <= 5; ++row) {
    const double se = std::hypot(column(csv, "reward_se", row), column(csv, "reward_se", row - 1));
    CHECK(column(csv, "mean_reward", row) >= column(csv, "mean_reward", row - 1) - 2 * se);
  }
}

TEST_CASE("every row has as many cells as its header") {
  const auto cfg = parse_config(kTiny);
  std::vector<Artifact> all = run_experiment(cfg);
  for (auto& a : run_sweep(cfg)) all.push_back(a);
  for (auto& a : run_oracle(cfg)) all.push_back(a);
  for (const auto& a : all) {
    if (a.filename.find(".csv") == std::string::npos) continue;
    auto ls = lines(a.content);
    if (!ls.empty() && ls[0].rfind("#", 0) == 0) ls.erase(ls.begin());
    REQUIRE(!ls.empty());
    const auto width = cells(ls[0]).size();
    for (const auto& l : ls) CHECK(cells(l).size() == width);
  }
}

TEST_CASE("sweep rejects unknown parameters and empty grids") {
  const auto cfg = parse_config(kTiny);
  CHECK_THROWS_AS(run_sweep(cfg, std::string("temperature")), ConfigError);
  CHECK_THROWS_AS(run_sweep(cfg, std::string("N"), std::vector<double>{}), ConfigError);
}

TEST_CASE("oracle table sums to one") {
  const auto o = lines(content(run_oracle(parse_config(kTiny)), "oracle.csv"));
  REQUIRE(o.size() == 2 + 4);
  double s = 0;
  for (std::size_t i = 2; i < o.size(); ++i) s += std::stod(cells(o[i]).at(1));
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("refine iterates keep non-decreasing rewards") {
  auto text = replace(kTiny, "\"sweep\"",
                      "\"refine\": {\"k\": 3, \"iterations\": 8, \"max_distance\": 1, "
                      "\"seed_sequence\": \"AA\"}, \"sweep\"");
  const auto arts = run_refine(parse_config(text));
  const auto it = lines(content(arts, "refine_iterates.csv"));
  REQUIRE(it.size() == 1 + 9);
  for (std::size_t i = 2; i < it.size(); ++i)
    CHECK(std::stod(cells(it[i]).at(2)) >= std::stod(cells(it[i - 1]).at(2)));
}

TEST_CASE("artifacts are written to disk") {
  const auto dir = std::filesystem::temp_directory_path() / "dalign_cli_harness";
  std::filesystem::remove_all(dir);
  const auto arts = run_experiment(parse_config(kTiny));
  write_artifacts(dir.string(), arts);
  std::ifstream f(dir / "summary.csv");
  std::stringstream ss;
  ss << f.rdbuf();
  CHECK(ss.str() == content(arts, "summary.csv"));
}

}  // TEST_SUITE
