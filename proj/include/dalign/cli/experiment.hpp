#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dalign/core/error.hpp"

namespace dalign::cli {

/// Validation failure tied to a dotted config field such as "sampler.alpha".
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(Errc::validation, field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct ExperimentConfig {
  nlohmann::json doc;
  std::string source;  // raw text, kept for line lookups in diagnostics
  std::string path = "<memory>";
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out_dir = "out";
};

ExperimentConfig parse_config(const std::string& text, const std::string& path = "<memory>");
ExperimentConfig load_config(const std::string& path);

/// Checks required blocks and cross-field rules; throws ConfigError.
void validate_config(const ExperimentConfig& cfg);

/// "<path>:<line>: error: <message>", the line being the best match for the
/// offending field (1 when it cannot be located).
std::string diagnostic(const ExperimentConfig& cfg, const std::string& field,
                       const std::string& message);

struct Artifact {
  std::string filename;
  std::string content;
};

/// summary.csv (one row), trace.csv (per-step ESS) and samples.csv.
std::vector<Artifact> run_experiment(const ExperimentConfig& cfg);

/// sweep.csv (one row per grid point) and sweep_plot.dat (value, mean
/// reward). Parameter and grid default to the config's sweep block.
std::vector<Artifact> run_sweep(const ExperimentConfig& cfg,
                                const std::optional<std::string>& parameter = {},
                                const std::optional<std::vector<double>>& grid = {});

/// oracle.csv with the tilted target table (masked models) or grid
/// (1-D Gaussian models).
std::vector<Artifact> run_oracle(const ExperimentConfig& cfg);

/// student.csv and distill_summary.csv (masked models).
std::vector<Artifact> run_distill(const ExperimentConfig& cfg);

/// refine.csv (every proposal) and refine_iterates.csv.
std::vector<Artifact> run_refine(const ExperimentConfig& cfg);

void write_artifacts(const std::string& out_dir, const std::vector<Artifact>& artifacts);

/// Header of summary.csv, also the column set of sweep rows.
const std::vector<std::string>& summary_columns();

}  // namespace dalign::cli
