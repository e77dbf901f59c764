// Command-line front end: dataset generation, training runs with repeats,
// parameter sweeps, and summary recomputation. Config files are JSON; CLI
// flags override file values. Every output file embeds the config hash and
// seed, and the whole output tree is a pure function of (config, seeds).
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "echoes/data.hpp"
#include "echoes/metrics.hpp"
#include "echoes/training.hpp"

namespace echoes::harness {

struct CsvPaths {
  std::string train;
  std::string test;
};

struct RunSpec {
  train::TrainConfig config;
  std::size_t repeats = 3;  // seeds config.seed, config.seed + 1, ...
};

struct SweepSpec {
  std::string name;            // "alpha" or "fraction"
  std::vector<double> values;  // grid; defaults applied when absent
  train::TrainConfig config;   // base config for sweep runs
  std::size_t repeats = 3;
};

struct ExperimentConfig {
  std::optional<data::SyntheticSpec> synthetic;
  std::optional<CsvPaths> csv;
  std::vector<RunSpec> runs;
  std::optional<SweepSpec> sweep;
  std::string output_dir = "out";
  std::size_t jobs = 1;
  std::string hash;  // FNV-1a of the canonical config JSON, set on load
};

// Parses and validates a config; unknown method names and malformed values
// are rejected with a usage error (std::invalid_argument).
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
std::string config_hash(const nlohmann::json& j);

struct CliOverrides {
  std::optional<std::string> method;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::size_t> jobs;
};
void apply_overrides(ExperimentConfig& config, const CliOverrides& overrides);

// Per-run result row as written to metrics JSON and the metrics CSV table.
struct RunRecord {
  std::string method;
  std::uint64_t seed = 0;
  metrics::GroupMetrics test_metrics;
  std::vector<double> gaps;  // per bias
  double avg_gap = 0.0;
  std::optional<double> pseudo_f1;
  std::vector<std::string> warnings;
};

// generate: writes train.csv, test.csv and manifest.json into output_dir.
void cmd_generate(const ExperimentConfig& config);

// train: loads the dataset (explicit csv paths, else output_dir/{train,test}.csv),
// executes every (run, repeat), writes per-run history CSV + metrics JSON,
// the cumulative metrics.csv, and summary.csv (mean +/- std per method).
std::vector<RunRecord> cmd_train(const ExperimentConfig& config);

// sweep: runs the configured grid. "alpha" sweeps the echo decay factor of
// the configured method; "fraction" subsamples the training data and trains
// the configured method (plain ERM by default) to probe bias learning from
// partial data. Writes sweep_<name>.csv.
void cmd_sweep(const ExperimentConfig& config);

// evaluate: rebuilds summary.csv from the metrics_*.json files in output_dir.
void cmd_evaluate(const std::string& output_dir);

}  // namespace echoes::harness
