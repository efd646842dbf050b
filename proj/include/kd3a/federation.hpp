#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kd3a/bn_mmd.hpp"
#include "kd3a/consensus_focus.hpp"
#include "kd3a/knowledge_vote.hpp"
#include "kd3a/nn.hpp"
#include "kd3a/synth.hpp"
#include "kd3a/weights.hpp"

namespace kd3a {

// How the target model's BatchNorm statistics chase the weighted source
// moments: substitute the closed-form optimum, descend the per-batch
// moment-matching loss, or leave them as aggregation produced them.
enum class BnMmdMode { closed_form, gradient, off };

const char* to_string(BnMmdMode m);
BnMmdMode bn_mmd_mode_from_string(const std::string& name);

struct RoundConfig {
  int epochs = 30;
  // Synchronizations per epoch. r >= 1: each epoch is split into round(r)
  // stages with an aggregation after each. r < 1: sources train round(1/r)
  // full local epochs between aggregations.
  double sync_rate = 1.0;
  double gate_lo = 0.5;
  double gate_hi = 0.9;
  double lr_hi = 0.05;
  double lr_lo = 0.02;
  double momentum = 0.9;
  int batch_size = 50;
  std::vector<int> hidden = {32, 32, 32};
  WeightStrategy weighting = WeightStrategy::consensus_focus;
  bool use_knowledge_vote = true;   // false: mean-ensemble distillation, support 1
  BnMmdMode bn_mmd = BnMmdMode::closed_form;
  bool include_distilled_domain = true;  // false: aggregate the K sources only
  uint64_t seed = 0;
  std::string checkpoint_dir;  // empty: no checkpoints written
  bool collect_diagnostics = false;

  void validate() const;
};

struct UploadRecord {
  int sync_index = 0;
  double epoch_end = 0.0;  // fractional epoch at which the upload happens
  int source = 0;
  size_t bytes = 0;
};

struct CommunicationLog {
  std::vector<UploadRecord> uploads;
  size_t total_bytes = 0;
  int sync_count = 0;
};

struct EpochMetrics {
  int epoch = 0;  // 1-based, the epoch just completed
  double target_accuracy = 0.0;
  double gate = 0.0;
  double lr = 0.0;
  std::vector<double> alpha;   // one entry per aggregated model
  std::vector<double> cf_raw;  // per-source marginal contributions (consensus focus only)
  double source_loss = 0.0;    // mean classification loss over sources, last sync
  double kd_loss = 0.0;        // mean distillation loss, last sync
  double bn_loss = 0.0;        // moment-matching loss, last sync
  size_t bytes_cumulative = 0;
};

struct Metrics {
  std::vector<EpochMetrics> rows;
};

// A logged (consensus, student) distribution pair, for the total-variation
// bound diagnostics.
struct DistillPair {
  std::vector<double> p;
  std::vector<double> q;
  double n_p = 0.0;
};

struct RoundState {
  Architecture arch;
  ModelParams global;
  double gate = 0.0;
  double lr = 0.0;
  DomainWeights alpha;
  CfReport last_cf;
  double source_loss = 0.0;
  double kd_loss = 0.0;
  double bn_loss = 0.0;
  int sync_index = 0;           // syncs completed so far
  double epoch_progress = 0.0;  // fractional epochs completed so far
  CommunicationLog log;
  std::vector<CfReport> cf_history;
  std::vector<DistillPair> distill_pairs;
};

struct TrainingResult {
  Classifier model;
  Metrics metrics;
  CommunicationLog log;
  std::vector<CfReport> cf_history;
  std::vector<DistillPair> distill_pairs;
};

// Linear ramp of the confidence gate from gate_lo (epoch 0) to gate_hi
// (epoch total), clamped at the ends.
double confidence_gate_schedule(double epoch, double total_epochs, double gate_lo, double gate_hi);

// Minibatch SGD on one labeled domain, starting from `init`, for `steps`
// batches taken from position `step_offset` of a seeded batch order. The
// operation sees exactly one domain's data. Returns the updated parameters.
ModelParams local_train_stage(const Architecture& arch, const LabeledDataset& domain,
                              const ModelParams& init, double lr, double momentum, int batch_size,
                              int steps, int step_offset, uint64_t seed,
                              double* mean_loss = nullptr);

// The same driver for the distilled domain: support-weighted distillation
// toward the consensus items instead of cross-entropy on labels.
ModelParams distill_train_stage(const Architecture& arch, const ExtendedDomain& domain,
                                const ModelParams& init, double lr, double momentum,
                                int batch_size, int steps, int step_offset, uint64_t seed,
                                double* mean_loss = nullptr,
                                std::vector<DistillPair>* logged_pairs = nullptr);

RoundState init_round_state(const Architecture& arch, const RoundConfig& config);

// One synchronization: local stages on every source, upload, distilled-domain
// construction and training, domain weighting, aggregation, BatchNorm moment
// update. Advances the state's sync/epoch counters.
void kd3a_round(RoundState& state, const std::vector<LabeledDataset>& sources,
                const UnlabeledDataset& target, const RoundConfig& config);

// Full run: repeated kd3a_round with per-epoch evaluation rows and optional
// checkpoints (epoch_{t}.kd3a in config.checkpoint_dir).
TrainingResult run_training(const RoundConfig& config, const std::vector<LabeledDataset>& sources,
                            const UnlabeledDataset& target);

// Number of synchronizations a full run performs; exposed for byte accounting.
int total_sync_count(const RoundConfig& config);

}  // namespace kd3a
