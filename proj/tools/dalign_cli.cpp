#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dalign/cli/experiment.hpp"

using namespace dalign;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string out_dir;
};

int run(const std::string& config_path, const Globals& g,
        const std::function<std::vector<cli::Artifact>(const cli::ExperimentConfig&)>& body) {
  cli::ExperimentConfig cfg;
  try {
    cfg = cli::load_config(config_path);
  } catch (const cli::ConfigError& e) {
    cfg.path = config_path;
    std::cerr << cli::diagnostic(cfg, e.field(), e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << config_path << ": error: " << e.what() << "\n";
    return 2;
  }
  if (g.seed) cfg.seed = *g.seed;
  cfg.threads = g.threads;
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  try {
    const auto artifacts = body(cfg);
    cli::write_artifacts(cfg.out_dir, artifacts);
    for (const auto& a : artifacts) std::cout << cfg.out_dir << "/" << a.filename << "\n";
  } catch (const cli::ConfigError& e) {
    std::cerr << cli::diagnostic(cfg, e.field(), e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << config_path << ": error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inference-time alignment samplers for diffusion models"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_option("--threads", g.threads, "Worker threads (results do not depend on it)")
      ->check(CLI::PositiveNumber);
  app.add_option("--out-dir", g.out_dir, "Output directory (default: output.dir or ./out)");

  std::string config;
  auto* run_cmd = app.add_subcommand("run", "Run one sampler configuration");
  run_cmd->add_option("config", config, "JSON config")->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "Sweep one sampler parameter");
  sweep_cmd->add_option("config", config, "JSON config")->required();
  std::string parameter;
  std::vector<double> grid;
  sweep_cmd->add_option("--parameter", parameter, "Parameter to sweep (default: sweep.parameter)");
  sweep_cmd->add_option("--grid", grid, "Grid values (default: sweep.grid)")->delimiter(',');

  auto* oracle_cmd = app.add_subcommand("oracle", "Export the exact tilted target");
  oracle_cmd->add_option("config", config, "JSON config")->required();

  auto* distill_cmd = app.add_subcommand("distill", "Distill a teacher sampler into a tabular student");
  distill_cmd->add_option("config", config, "JSON config")->required();

  auto* refine_cmd = app.add_subcommand("refine", "Iteratively refine a seed design");
  refine_cmd->add_option("config", config, "JSON config")->required();

  for (auto* sub : {run_cmd, sweep_cmd, oracle_cmd, distill_cmd, refine_cmd}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  if (*run_cmd) return run(config, g, cli::run_experiment);
  if (*sweep_cmd)
    return run(config, g, [&](const cli::ExperimentConfig& cfg) {
      std::optional<std::string> p;
      std::optional<std::vector<double>> gr;
      if (!parameter.empty()) p = parameter;
      if (!grid.empty()) gr = grid;
      return cli::run_sweep(cfg, p, gr);
    });
  if (*oracle_cmd) return run(config, g, cli::run_oracle);
  if (*distill_cmd) return run(config, g, cli::run_distill);
  return run(config, g, cli::run_refine);
}
