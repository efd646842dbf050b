#include "kd3a/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "kd3a/rng.hpp"

namespace kd3a {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for a single observation.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::clean: return "clean";
    case Scenario::irrelevant: return "irrelevant";
    case Scenario::malicious: return "malicious";
  }
  throw std::invalid_argument("to_string: unknown scenario");
}

Scenario scenario_from_string(const std::string& name) {
  if (name == "clean") return Scenario::clean;
  if (name == "irrelevant") return Scenario::irrelevant;
  if (name == "malicious") return Scenario::malicious;
  throw std::invalid_argument("unknown scenario: " + name);
}

std::string scenario_label(const ExperimentConfig& config) {
  if (config.scenario != Scenario::malicious) return to_string(config.scenario);
  return "malicious" + std::to_string(static_cast<int>(std::llround(config.malicious_fraction * 100)));
}

void ExperimentConfig::validate() const {
  round.validate();
  if (source_rotations.empty() || source_rotations.size() != source_sizes.size())
    throw std::invalid_argument("ExperimentConfig: one rotation and one size per source");
  for (int n : source_sizes)
    if (n < num_classes) throw std::invalid_argument("ExperimentConfig: source too small");
  if (target_size < num_classes) throw std::invalid_argument("ExperimentConfig: target too small");
  if (num_classes < 2 || input_dim < 2)
    throw std::invalid_argument("ExperimentConfig: need >= 2 classes and >= 2 dims");
  if (!(radius > 0.0) || !(cov_scale > 0.0))
    throw std::invalid_argument("ExperimentConfig: radius and cov_scale must be > 0");
  if (malicious_fraction < 0.0 || malicious_fraction > 1.0)
    throw std::invalid_argument("ExperimentConfig: malicious fraction outside [0,1]");
  if (strategies.empty()) throw std::invalid_argument("ExperimentConfig: no strategies");
  for (const auto& s : strategies) strategy_round_config(s, round);  // rejects unknown names
  if (seeds.empty()) throw std::invalid_argument("ExperimentConfig: no seeds");
}

ExperimentConfig experiment_from_key_values(const KeyValues& kv, ExperimentConfig base) {
  ExperimentConfig c = std::move(base);
  c.scenario = scenario_from_string(
      config_string(kv, "experiment.scenario", to_string(c.scenario)));
  c.malicious_fraction =
      config_double(kv, "experiment.malicious_fraction", c.malicious_fraction);
  c.num_classes = config_int(kv, "experiment.num_classes", c.num_classes);
  c.input_dim = config_int(kv, "experiment.input_dim", c.input_dim);
  c.radius = config_double(kv, "experiment.radius", c.radius);
  c.cov_scale = config_double(kv, "experiment.cov_scale", c.cov_scale);
  c.source_rotations =
      config_double_list(kv, "experiment.source_rotations", c.source_rotations);
  c.source_sizes = config_int_list(kv, "experiment.source_sizes", c.source_sizes);
  c.target_size = config_int(kv, "experiment.target_size", c.target_size);
  c.strategies = config_string_list(kv, "experiment.strategies", c.strategies);
  c.seeds = config_seed_list(kv, "experiment.seeds", c.seeds);
  c.out_dir = config_string(kv, "experiment.out_dir", c.out_dir);
  c.write_checkpoints = config_bool(kv, "experiment.checkpoints", c.write_checkpoints);

  RoundConfig& r = c.round;
  r.epochs = config_int(kv, "round.epochs", r.epochs);
  r.sync_rate = config_double(kv, "round.r", r.sync_rate);
  r.gate_lo = config_double(kv, "round.gate_lo", r.gate_lo);
  r.gate_hi = config_double(kv, "round.gate_hi", r.gate_hi);
  r.lr_hi = config_double(kv, "round.lr_hi", r.lr_hi);
  r.lr_lo = config_double(kv, "round.lr_lo", r.lr_lo);
  r.momentum = config_double(kv, "round.momentum", r.momentum);
  r.batch_size = config_int(kv, "round.batch_size", r.batch_size);
  r.hidden = config_int_list(kv, "round.hidden", r.hidden);
  return c;
}

ScenarioData build_scenario(const ExperimentConfig& config, uint64_t seed) {
  config.validate();
  const auto geometry = make_class_geometry(config.num_classes, config.input_dim, config.radius,
                                            mix_seed(seed, "geometry"));

  DomainSpec base;
  base.num_classes = config.num_classes;
  base.input_dim = config.input_dim;
  base.class_means = geometry;
  base.cov_scale = config.cov_scale;

  DomainSpec target_spec = base;
  target_spec.sample_count = config.target_size;
  target_spec.seed = mix_seed(seed, "target");

  ScenarioData data{{}, as_target(generate_domain(target_spec)), -1};

  const int K = config.num_sources();
  data.sources.reserve(K);
  std::vector<DomainSpec> specs(K, base);
  for (int k = 0; k < K; ++k) {
    specs[k].rotation_angle = config.source_rotations[k];
    specs[k].sample_count = config.source_sizes[k];
    specs[k].seed = mix_seed(seed, "source", k);
    data.sources.push_back(generate_domain(specs[k]));
  }

  switch (config.scenario) {
    case Scenario::clean:
      break;
    case Scenario::malicious:
      data.flagged_source = 0;
      data.sources[0] =
          corrupt_labels(data.sources[0], config.malicious_fraction, mix_seed(seed, "poison"));
      break;
    case Scenario::irrelevant: {
      int hard = 0;
      for (int k = 1; k < K; ++k)
        if (std::abs(config.source_rotations[k]) > std::abs(config.source_rotations[hard]))
          hard = k;
      data.flagged_source = hard;
      data.sources[hard] = make_irrelevant_domain(specs[hard], mix_seed(seed, "irrelevant"));
      break;
    }
  }
  return data;
}

const std::vector<std::string>& known_strategies() {
  static const std::vector<std::string> names = {
      "kd3a",    "source_only",  "uniform",    "datasize",
      "hdiv",    "kd3a_no_vote", "kd3a_no_cf", "kd3a_no_bnmmd",
  };
  return names;
}

bool strategy_reads_source_data(const std::string& strategy) { return strategy == "hdiv"; }

RoundConfig strategy_round_config(const std::string& strategy, const RoundConfig& base) {
  RoundConfig rc = base;
  rc.weighting = WeightStrategy::consensus_focus;
  rc.use_knowledge_vote = true;
  rc.bn_mmd = BnMmdMode::closed_form;
  rc.include_distilled_domain = true;

  if (strategy == "kd3a") {
    // the full method: defaults above
  } else if (strategy == "source_only") {
    // no target-side machinery at all: plain data-weighted averaging
    rc.weighting = WeightStrategy::datasize;
    rc.include_distilled_domain = false;
    rc.use_knowledge_vote = false;
    rc.bn_mmd = BnMmdMode::off;
  } else if (strategy == "uniform") {
    rc.weighting = WeightStrategy::uniform;
  } else if (strategy == "datasize") {
    rc.weighting = WeightStrategy::datasize;
  } else if (strategy == "hdiv") {
    rc.weighting = WeightStrategy::hdiv_proxy;
  } else if (strategy == "kd3a_no_vote") {
    rc.use_knowledge_vote = false;
  } else if (strategy == "kd3a_no_cf") {
    rc.weighting = WeightStrategy::datasize;
  } else if (strategy == "kd3a_no_bnmmd") {
    rc.bn_mmd = BnMmdMode::off;
  } else {
    throw std::invalid_argument("unknown strategy: " + strategy);
  }
  return rc;
}

TrainingResult run_cell(const ExperimentConfig& config, const std::string& strategy,
                        uint64_t seed) {
  const ScenarioData data = build_scenario(config, seed);
  RoundConfig rc = strategy_round_config(strategy, config.round);
  rc.seed = mix_seed(seed, strategy);
  if (config.write_checkpoints) {
    rc.checkpoint_dir = config.out_dir + "/" + scenario_label(config) + "_" + strategy + "_seed" +
                        std::to_string(seed) + "_ckpt";
  }
  return run_training(rc, data.sources, data.target);
}

void write_metrics_csv(const std::string& path, const Metrics& metrics, int num_sources) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  const int K = num_sources;
  out << "epoch,target_accuracy,gate,lr";
  for (int k = 0; k <= K; ++k) out << ",alpha_" << k;
  for (int k = 0; k < K; ++k) out << ",cf_raw_" << k;
  out << ",source_loss,kd_loss,bn_loss,bytes_uploaded\n";
  for (const auto& row : metrics.rows) {
    out << row.epoch << "," << fmt_double(row.target_accuracy) << "," << fmt_double(row.gate)
        << "," << fmt_double(row.lr);
    for (int k = 0; k <= K; ++k)
      out << "," << fmt_double(k < static_cast<int>(row.alpha.size()) ? row.alpha[k] : 0.0);
    for (int k = 0; k < K; ++k)
      out << "," << fmt_double(k < static_cast<int>(row.cf_raw.size()) ? row.cf_raw[k] : 0.0);
    out << "," << fmt_double(row.source_loss) << "," << fmt_double(row.kd_loss) << ","
        << fmt_double(row.bn_loss) << "," << row.bytes_cumulative << "\n";
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

Metrics read_metrics_csv(const std::string& path, int num_sources) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty metrics file " + path);

  const int K = num_sources;
  Metrics metrics;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    const size_t expected = 4 + (K + 1) + K + 4;
    if (cells.size() != expected) throw std::runtime_error("ragged metrics row in " + path);

    EpochMetrics row;
    size_t i = 0;
    row.epoch = std::stoi(cells[i++]);
    row.target_accuracy = std::stod(cells[i++]);
    row.gate = std::stod(cells[i++]);
    row.lr = std::stod(cells[i++]);
    row.alpha.resize(K + 1);
    for (int k = 0; k <= K; ++k) row.alpha[k] = std::stod(cells[i++]);
    row.cf_raw.resize(K);
    for (int k = 0; k < K; ++k) row.cf_raw[k] = std::stod(cells[i++]);
    row.source_loss = std::stod(cells[i++]);
    row.kd_loss = std::stod(cells[i++]);
    row.bn_loss = std::stod(cells[i++]);
    row.bytes_cumulative = static_cast<size_t>(std::stoull(cells[i++]));
    metrics.rows.push_back(std::move(row));
  }
  return metrics;
}

namespace {

struct CellOutcome {
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
  std::vector<double> final_alpha;
  int uploads = 0;
  size_t bytes = 0;
  Metrics metrics;
};

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  std::filesystem::create_directories(config.out_dir);

  const int S = static_cast<int>(config.strategies.size());
  const int V = static_cast<int>(config.seeds.size());
  const int cells = S * V;
  std::vector<CellOutcome> outcomes(cells);
  std::vector<std::string> errors(cells);

#pragma omp parallel for schedule(dynamic)
  for (int cell = 0; cell < cells; ++cell) {
    const std::string& strategy = config.strategies[cell / V];
    const uint64_t seed = config.seeds[cell % V];
    try {
      TrainingResult result = run_cell(config, strategy, seed);
      CellOutcome& o = outcomes[cell];
      o.final_accuracy = result.metrics.rows.back().target_accuracy;
      for (const auto& row : result.metrics.rows)
        o.best_accuracy = std::max(o.best_accuracy, row.target_accuracy);
      o.final_alpha = result.metrics.rows.back().alpha;
      o.uploads = static_cast<int>(result.log.uploads.size());
      o.bytes = result.log.total_bytes;
      o.metrics = std::move(result.metrics);
    } catch (const std::exception& e) {
      errors[cell] = e.what();
    }
  }
  for (int cell = 0; cell < cells; ++cell)
    if (!errors[cell].empty())
      throw std::runtime_error("experiment cell " + config.strategies[cell / V] + "/seed" +
                               std::to_string(config.seeds[cell % V]) + " failed: " +
                               errors[cell]);

  const std::string label = scenario_label(config);
  const int K = config.num_sources();
  const int flagged = build_scenario(config, config.seeds[0]).flagged_source;

  ExperimentResult result;
  for (int cell = 0; cell < cells; ++cell) {
    const std::string path = config.out_dir + "/" + label + "_" + config.strategies[cell / V] +
                             "_seed" + std::to_string(config.seeds[cell % V]) + ".csv";
    write_metrics_csv(path, outcomes[cell].metrics, K);
    result.run_csv_paths.push_back(path);
  }

  for (int s = 0; s < S; ++s) {
    RunSummary sum;
    sum.scenario = label;
    sum.strategy = config.strategies[s];
    sum.num_seeds = V;
    std::vector<double> finals, bests;
    std::vector<double> alpha_acc;
    for (int v = 0; v < V; ++v) {
      const CellOutcome& o = outcomes[s * V + v];
      finals.push_back(o.final_accuracy);
      bests.push_back(o.best_accuracy);
      if (alpha_acc.size() < o.final_alpha.size()) alpha_acc.resize(o.final_alpha.size(), 0.0);
      for (size_t k = 0; k < o.final_alpha.size(); ++k) alpha_acc[k] += o.final_alpha[k];
      sum.uploads_per_run = o.uploads;
      sum.bytes_per_run = o.bytes;
    }
    sum.final_accuracy_mean = mean_of(finals);
    sum.final_accuracy_std = std_of(finals);
    sum.best_accuracy_mean = mean_of(bests);
    for (double a : alpha_acc) sum.final_alpha_mean.push_back(a / V);
    if (flagged >= 0 && flagged < static_cast<int>(sum.final_alpha_mean.size()))
      sum.flagged_alpha_mean = sum.final_alpha_mean[flagged];
    result.summaries.push_back(std::move(sum));
  }

  // Summary CSV + Markdown table.
  result.summary_csv_path = config.out_dir + "/" + label + "_summary.csv";
  {
    std::ofstream out(result.summary_csv_path);
    if (!out) throw std::runtime_error("cannot open " + result.summary_csv_path);
    out << "scenario,strategy,num_seeds,final_accuracy_mean,final_accuracy_std,"
           "best_accuracy_mean,flagged_alpha_mean,uploads_per_run,bytes_per_run\n";
    for (const auto& s : result.summaries) {
      out << s.scenario << "," << s.strategy << "," << s.num_seeds << ","
          << fmt_double(s.final_accuracy_mean) << "," << fmt_double(s.final_accuracy_std) << ","
          << fmt_double(s.best_accuracy_mean) << ","
          << (s.flagged_alpha_mean >= 0.0 ? fmt_double(s.flagged_alpha_mean) : std::string())
          << "," << s.uploads_per_run << "," << s.bytes_per_run << "\n";
    }
  }

  result.summary_md_path = config.out_dir + "/" + label + "_summary.md";
  {
    std::ofstream out(result.summary_md_path);
    if (!out) throw std::runtime_error("cannot open " + result.summary_md_path);
    out << "# " << label << " (" << V << " seeds)\n\n";
    out << "| strategy | final accuracy | best accuracy | flagged source weight |\n";
    out << "|---|---|---|---|\n";
    for (const auto& s : result.summaries) {
      out << "| " << s.strategy << " | " << fmt_fixed(s.final_accuracy_mean, 3) << " ± "
          << fmt_fixed(s.final_accuracy_std, 3) << " | " << fmt_fixed(s.best_accuracy_mean, 3)
          << " | "
          << (s.flagged_alpha_mean >= 0.0 ? fmt_fixed(s.flagged_alpha_mean, 4) : std::string("—"))
          << " |\n";
    }
  }
  return result;
}

ExperimentResult run_ablation(ExperimentConfig config) {
  config.strategies = {"kd3a", "kd3a_no_vote", "kd3a_no_cf", "kd3a_no_bnmmd"};
  return run_experiment(config);
}

DiagnosticsReport run_diagnostics(const ExperimentConfig& config) {
  config.validate();
  ExperimentConfig diag = config;
  diag.round.collect_diagnostics = true;

  const uint64_t seed = diag.seeds[0];
  const TrainingResult result = run_cell(diag, "kd3a", seed);

  DiagnosticsReport report;
  for (const auto& pair : result.distill_pairs) {
    const double kl = kl_divergence(pair.p, pair.q);
    const double bound = std::sqrt(std::max(kl, 0.0) / 2.0);
    double max_dev = 0.0;
    for (size_t c = 0; c < pair.p.size(); ++c)
      max_dev = std::max(max_dev, std::abs(pair.p[c] - pair.q[c]));
    const double margin = max_dev - bound;
    if (report.pairs_checked == 0 || margin > report.max_margin) report.max_margin = margin;
    if (margin > 1e-12) ++report.violations;
    ++report.pairs_checked;
  }

  // Structural zero-divergence of the input spaces: the distilled domain holds
  // the target dataset itself, not a copy.
  const ScenarioData data = build_scenario(diag, seed);
  std::vector<Classifier> teachers;
  const Architecture arch{diag.input_dim, diag.num_classes, diag.round.hidden};
  for (int k = 0; k < diag.num_sources(); ++k)
    teachers.push_back(Classifier::init(arch, mix_seed(seed, "probe", k)));
  const ExtendedDomain dom = build_extended_domain(data.target, teachers, 0.9);
  report.input_identity_ok =
      dom.target == &data.target && &dom.target->inputs() == &data.target.inputs();
  return report;
}

}  // namespace kd3a
