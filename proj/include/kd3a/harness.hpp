#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kd3a/config.hpp"
#include "kd3a/federation.hpp"
#include "kd3a/synth.hpp"

namespace kd3a {

enum class Scenario { clean, irrelevant, malicious };

const char* to_string(Scenario s);
Scenario scenario_from_string(const std::string& name);

struct ExperimentConfig {
  Scenario scenario = Scenario::clean;
  double malicious_fraction = 0.5;  // label-corruption rate of the poisoned source
  int num_classes = 4;
  int input_dim = 8;
  double radius = 3.0;     // class-geometry scale
  double cov_scale = 1.0;  // within-class covariance (isotropic)
  // One rotation per source; the shift dial. The largest magnitude marks the
  // "hard" source that the irrelevant scenario replaces.
  std::vector<double> source_rotations = {0.2, 0.35, 2.0};
  std::vector<int> source_sizes = {400, 400, 400};
  int target_size = 400;
  RoundConfig round;
  std::vector<std::string> strategies = {"kd3a", "source_only"};
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string out_dir = "out";
  bool write_checkpoints = false;

  int num_sources() const { return static_cast<int>(source_rotations.size()); }
  void validate() const;
};

// File-name tag: "clean", "irrelevant", "malicious50", ...
std::string scenario_label(const ExperimentConfig& config);

// Overlay config-file keys ([experiment] and [round] sections) onto a base.
ExperimentConfig experiment_from_key_values(const KeyValues& kv, ExperimentConfig base = {});

struct ScenarioData {
  std::vector<LabeledDataset> sources;
  UnlabeledDataset target;
  int flagged_source = -1;  // poisoned or replaced source; -1 in the clean scenario
};

// Datasets depend on (config, seed) only — every strategy sees the same data
// for a given seed, so strategy comparisons are paired.
ScenarioData build_scenario(const ExperimentConfig& config, uint64_t seed);

// Preset algorithm toggles by strategy name; schedule/budget fields come from
// `base`. Known names: kd3a, source_only, uniform, datasize, hdiv,
// kd3a_no_vote, kd3a_no_cf, kd3a_no_bnmmd.
RoundConfig strategy_round_config(const std::string& strategy, const RoundConfig& base);
const std::vector<std::string>& known_strategies();
bool strategy_reads_source_data(const std::string& strategy);  // true for the hdiv oracle

struct RunSummary {
  std::string scenario;
  std::string strategy;
  int num_seeds = 0;
  double final_accuracy_mean = 0.0;
  double final_accuracy_std = 0.0;
  double best_accuracy_mean = 0.0;
  std::vector<double> final_alpha_mean;   // per aggregated slot
  double flagged_alpha_mean = -1.0;       // final weight of the flagged source, -1 if none
  int uploads_per_run = 0;
  size_t bytes_per_run = 0;
};

struct ExperimentResult {
  std::vector<RunSummary> summaries;
  std::vector<std::string> run_csv_paths;
  std::string summary_csv_path;
  std::string summary_md_path;
};

// One (strategy, seed) row of the experiment grid.
TrainingResult run_cell(const ExperimentConfig& config, const std::string& strategy,
                        uint64_t seed);

ExperimentResult run_experiment(const ExperimentConfig& config);

// The component-removal grid: kd3a vs each single-component-removed variant.
ExperimentResult run_ablation(ExperimentConfig config);

struct DiagnosticsReport {
  size_t pairs_checked = 0;
  size_t violations = 0;        // total-variation bound failures
  double max_margin = 0.0;      // max over pairs of max_c |p_c - q_c| - sqrt(KL/2)
  bool input_identity_ok = false;  // distilled domain aliases the target inputs
};

// Trains one consensus run with pair logging and checks the total-variation
// bound on every logged (p, q) pair, plus the shared-input-space property of
// the distilled domain.
DiagnosticsReport run_diagnostics(const ExperimentConfig& config);

void write_metrics_csv(const std::string& path, const Metrics& metrics, int num_sources);
Metrics read_metrics_csv(const std::string& path, int num_sources);

}  // namespace kd3a
