#include "kd3a/federation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <stdexcept>

#include "kd3a/rng.hpp"

namespace kd3a {

namespace {

constexpr size_t kMaxLoggedPairs = 2048;

// Batch windows over a permutation of N samples. A trailing fragment of one
// sample is folded into the previous batch: train-mode forwards need >= 2 rows.
std::vector<std::pair<int, int>> batch_windows(int n, int batch_size) {
  std::vector<std::pair<int, int>> windows;
  int begin = 0;
  while (begin < n) {
    int end = std::min(begin + batch_size, n);
    if (n - end == 1) end = n;
    windows.emplace_back(begin, end);
    begin = end;
  }
  return windows;
}

std::vector<int> permutation(int n, uint64_t seed) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
  return order;
}

// Which slice of the epoch's batch order stage s out of S covers.
std::pair<int, int> stage_slice(int batch_count, int stage, int stages) {
  const int lo = static_cast<int>(static_cast<long long>(batch_count) * stage / stages);
  const int hi = static_cast<int>(static_cast<long long>(batch_count) * (stage + 1) / stages);
  return {lo, hi};
}

struct SyncWindow {
  double epoch_start = 0.0;
  double epoch_end = 0.0;
  bool sub_epoch = true;  // true: stage `stage` of `stages` within epoch `epoch`
  int epoch = 0;
  int stage = 0;
  int stages = 1;
  int epochs_spanned = 1;  // multi-epoch syncs only
};

SyncWindow sync_window(const RoundConfig& config, int sync_index) {
  SyncWindow w;
  if (config.sync_rate >= 1.0) {
    w.stages = static_cast<int>(std::llround(config.sync_rate));
    w.epoch = sync_index / w.stages;
    w.stage = sync_index % w.stages;
    w.epoch_start = w.epoch + static_cast<double>(w.stage) / w.stages;
    w.epoch_end = w.epoch + static_cast<double>(w.stage + 1) / w.stages;
  } else {
    w.sub_epoch = false;
    const int period = static_cast<int>(std::llround(1.0 / config.sync_rate));
    const int start = sync_index * period;
    const int end = std::min(start + period, config.epochs);
    w.epoch_start = start;
    w.epoch_end = end;
    w.epochs_spanned = end - start;
    w.epoch = start;
  }
  return w;
}

// Minibatch plan for one domain across one sync.
struct StagePlan {
  int steps = 0;
  int step_offset = 0;
  uint64_t seed = 0;
};

StagePlan stage_plan(const RoundConfig& config, const SyncWindow& w, int sample_count) {
  // The batch-order seed is shared by every domain on purpose: each silo
  // derives its shuffle from the public sync seed, so identical datasets
  // train identically regardless of which slot holds them (the symmetry the
  // weighting tests rely on). It varies per epoch.
  const int batches = static_cast<int>(batch_windows(sample_count, config.batch_size).size());
  StagePlan plan;
  plan.seed = mix_seed(config.seed, "epoch", w.epoch);
  if (w.sub_epoch) {
    const auto [lo, hi] = stage_slice(batches, w.stage, w.stages);
    plan.steps = hi - lo;
    plan.step_offset = lo;
  } else {
    plan.steps = w.epochs_spanned * batches;
    plan.step_offset = 0;
  }
  return plan;
}

Matrix gather_rows(const Matrix& inputs, const std::vector<int>& order, int begin, int end) {
  Matrix batch(end - begin, inputs.cols);
  for (int i = begin; i < end; ++i) {
    const double* src = inputs.row(order[i]);
    double* dst = batch.row(i - begin);
    std::copy(src, src + inputs.cols, dst);
  }
  return batch;
}

}  // namespace

const char* to_string(BnMmdMode m) {
  switch (m) {
    case BnMmdMode::closed_form: return "closed_form";
    case BnMmdMode::gradient: return "gradient";
    case BnMmdMode::off: return "off";
  }
  throw std::invalid_argument("to_string: unknown bn-mmd mode");
}

BnMmdMode bn_mmd_mode_from_string(const std::string& name) {
  if (name == "closed_form") return BnMmdMode::closed_form;
  if (name == "gradient") return BnMmdMode::gradient;
  if (name == "off") return BnMmdMode::off;
  throw std::invalid_argument("unknown bn-mmd mode: " + name);
}

void RoundConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("RoundConfig: epochs must be >= 1");
  if (!(sync_rate > 0.0)) throw std::invalid_argument("RoundConfig: sync rate must be > 0");
  if (!(gate_lo > 0.0) || gate_lo > gate_hi || gate_hi >= 1.0)
    throw std::invalid_argument("RoundConfig: need 0 < gate_lo <= gate_hi < 1");
  if (!(lr_lo > 0.0) || lr_lo > lr_hi)
    throw std::invalid_argument("RoundConfig: need 0 < lr_lo <= lr_hi");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("RoundConfig: momentum must lie in [0, 1)");
  if (batch_size < 2) throw std::invalid_argument("RoundConfig: batch size must be >= 2");
  if (hidden.empty()) throw std::invalid_argument("RoundConfig: need at least one hidden layer");
  for (int h : hidden)
    if (h < 1) throw std::invalid_argument("RoundConfig: hidden widths must be positive");
  if (weighting == WeightStrategy::consensus_focus && !include_distilled_domain)
    throw std::invalid_argument(
        "RoundConfig: consensus focus weighting requires the distilled domain");
}

double confidence_gate_schedule(double epoch, double total_epochs, double gate_lo,
                                double gate_hi) {
  if (!(total_epochs > 0.0))
    throw std::invalid_argument("confidence_gate_schedule: total_epochs must be > 0");
  if (gate_lo > gate_hi)
    throw std::invalid_argument("confidence_gate_schedule: gate_lo > gate_hi");
  const double t = std::clamp(epoch / total_epochs, 0.0, 1.0);
  return gate_lo + (gate_hi - gate_lo) * t;
}

ModelParams local_train_stage(const Architecture& arch, const LabeledDataset& domain,
                              const ModelParams& init, double lr, double momentum, int batch_size,
                              int steps, int step_offset, uint64_t seed, double* mean_loss) {
  if (steps < 0 || step_offset < 0)
    throw std::invalid_argument("local_train_stage: negative step count");
  if (mean_loss) *mean_loss = 0.0;
  if (steps == 0) return init;

  const auto windows = batch_windows(domain.size(), batch_size);
  const int per_epoch = static_cast<int>(windows.size());

  Classifier model{arch, init};
  ParamGrads velocity = ParamGrads::zeros_like(init);
  std::vector<int> order;
  int have_epoch = -1;
  double loss_sum = 0.0;

  for (int t = step_offset; t < step_offset + steps; ++t) {
    const int epoch_slot = t / per_epoch;
    if (epoch_slot != have_epoch) {
      order = permutation(domain.size(), mix_seed(seed, "perm", epoch_slot));
      have_epoch = epoch_slot;
    }
    const auto [begin, end] = windows[t % per_epoch];
    Matrix batch = gather_rows(domain.inputs, order, begin, end);
    std::vector<int> labels(end - begin);
    for (int i = begin; i < end; ++i) labels[i - begin] = domain.labels[order[i]];

    ForwardTrace trace = forward_trace(model, batch, ForwardMode::train);
    loss_sum += cross_entropy_loss(trace.probs, labels);
    const Matrix dlogits = ce_grad_logits(trace.probs, labels);
    const ParamGrads grads = backward(model, trace, dlogits);
    sgd_step(model.params, velocity, grads, lr, momentum);
  }
  if (mean_loss) *mean_loss = loss_sum / steps;
  return model.params;
}

ModelParams distill_train_stage(const Architecture& arch, const ExtendedDomain& domain,
                                const ModelParams& init, double lr, double momentum,
                                int batch_size, int steps, int step_offset, uint64_t seed,
                                double* mean_loss, std::vector<DistillPair>* logged_pairs) {
  if (domain.target == nullptr || domain.size() != domain.target->size())
    throw std::invalid_argument("distill_train_stage: malformed distilled domain");
  if (steps < 0 || step_offset < 0)
    throw std::invalid_argument("distill_train_stage: negative step count");
  if (mean_loss) *mean_loss = 0.0;
  if (steps == 0) return init;

  const Matrix& inputs = domain.target->inputs();
  const auto windows = batch_windows(inputs.rows, batch_size);
  const int per_epoch = static_cast<int>(windows.size());

  Classifier model{arch, init};
  ParamGrads velocity = ParamGrads::zeros_like(init);
  std::vector<int> order;
  int have_epoch = -1;
  double loss_sum = 0.0;
  bool first_batch = true;

  for (int t = step_offset; t < step_offset + steps; ++t) {
    const int epoch_slot = t / per_epoch;
    if (epoch_slot != have_epoch) {
      order = permutation(inputs.rows, mix_seed(seed, "perm", epoch_slot));
      have_epoch = epoch_slot;
    }
    const auto [begin, end] = windows[t % per_epoch];
    const int rows = end - begin;
    Matrix batch = gather_rows(inputs, order, begin, end);

    ForwardTrace trace = forward_trace(model, batch, ForwardMode::train);
    Matrix dlogits(rows, trace.probs.cols);
    double batch_loss = 0.0;
    for (int i = 0; i < rows; ++i) {
      const ConsensusItem& item = domain.items[order[begin + i]];
      const double* q = trace.probs.row(i);
      batch_loss += weighted_kd_loss(item, std::span<const double>(q, trace.probs.cols));
      double* dl = dlogits.row(i);
      for (int c = 0; c < trace.probs.cols; ++c)
        dl[c] = item.n_p * (q[c] - item.p[c]) / rows;
      if (first_batch && logged_pairs && logged_pairs->size() < kMaxLoggedPairs) {
        DistillPair pair;
        pair.p = item.p;
        pair.q.assign(q, q + trace.probs.cols);
        pair.n_p = item.n_p;
        logged_pairs->push_back(std::move(pair));
      }
    }
    first_batch = false;
    loss_sum += batch_loss / rows;

    const ParamGrads grads = backward(model, trace, dlogits);
    sgd_step(model.params, velocity, grads, lr, momentum);
  }
  if (mean_loss) *mean_loss = loss_sum / steps;
  return model.params;
}

RoundState init_round_state(const Architecture& arch, const RoundConfig& config) {
  RoundState state;
  state.arch = arch;
  state.global = Classifier::init(arch, mix_seed(config.seed, "init")).params;
  state.gate = config.gate_lo;
  state.lr = config.lr_hi;
  return state;
}

int total_sync_count(const RoundConfig& config) {
  if (config.sync_rate >= 1.0)
    return config.epochs * static_cast<int>(std::llround(config.sync_rate));
  const int period = static_cast<int>(std::llround(1.0 / config.sync_rate));
  return (config.epochs + period - 1) / period;
}

void kd3a_round(RoundState& state, const std::vector<LabeledDataset>& sources,
                const UnlabeledDataset& target, const RoundConfig& config) {
  config.validate();
  const int K = static_cast<int>(sources.size());
  if (K < 1) throw std::invalid_argument("kd3a_round: no source domains");
  if (config.weighting == WeightStrategy::consensus_focus && K < 2)
    throw std::invalid_argument("kd3a_round: consensus focus needs >= 2 sources");
  for (const auto& s : sources)
    if (s.dim() != state.arch.input_dim || s.num_classes != state.arch.num_classes)
      throw std::invalid_argument("kd3a_round: source does not match the architecture");
  if (target.dim() != state.arch.input_dim)
    throw std::invalid_argument("kd3a_round: target does not match the architecture");

  const SyncWindow window = sync_window(config, state.sync_index);
  if (window.epoch_start >= config.epochs)
    throw std::logic_error("kd3a_round: training already complete");

  state.lr = cosine_lr(window.epoch_start, config.epochs, config.lr_hi, config.lr_lo);
  state.gate =
      confidence_gate_schedule(window.epoch_end, config.epochs, config.gate_lo, config.gate_hi);

  // Local training on each silo; the returned parameters are the upload.
  std::vector<ModelParams> uploaded(K);
  double source_loss_sum = 0.0;
  for (int k = 0; k < K; ++k) {
    const StagePlan plan = stage_plan(config, window, sources[k].size());
    double loss = 0.0;
    uploaded[k] = local_train_stage(state.arch, sources[k], state.global, state.lr,
                                    config.momentum, config.batch_size, plan.steps,
                                    plan.step_offset, plan.seed, &loss);
    source_loss_sum += loss;
    const size_t bytes = serialize_params(uploaded[k]).size();
    state.log.uploads.push_back({state.sync_index, window.epoch_end, k, bytes});
    state.log.total_bytes += bytes;
  }
  state.source_loss = source_loss_sum / K;

  std::vector<Classifier> teachers;
  teachers.reserve(K);
  for (int k = 0; k < K; ++k) teachers.push_back(Classifier{state.arch, uploaded[k]});

  const bool need_probs =
      config.include_distilled_domain || config.weighting == WeightStrategy::consensus_focus;
  std::vector<Matrix> probs;
  if (need_probs) probs = predict_all(teachers, target.inputs());

  // Distilled domain and its student model, trained from the previous global
  // parameters with the same stage budget as a source.
  std::vector<const ModelParams*> aggregated;
  for (int k = 0; k < K; ++k) aggregated.push_back(&uploaded[k]);
  ModelParams student;
  state.kd_loss = 0.0;
  if (config.include_distilled_domain) {
    const ExtendedDomain domain = config.use_knowledge_vote
                                      ? build_extended_domain(target, probs, state.gate)
                                      : build_mean_ensemble_domain(target, probs);
    const StagePlan plan = stage_plan(config, window, target.size());
    std::vector<DistillPair>* pairs =
        (config.collect_diagnostics && state.distill_pairs.size() < kMaxLoggedPairs)
            ? &state.distill_pairs
            : nullptr;
    student = distill_train_stage(state.arch, domain, state.global, state.lr, config.momentum,
                                  config.batch_size, plan.steps, plan.step_offset, plan.seed,
                                  &state.kd_loss, pairs);
    aggregated.push_back(&student);
  }

  // Domain weights for this sync.
  std::vector<int> sizes(K);
  for (int k = 0; k < K; ++k) sizes[k] = sources[k].size();
  if (config.weighting == WeightStrategy::consensus_focus) {
    state.last_cf = cf_values(probs, state.gate);
    state.alpha = domain_weights_cf(state.last_cf, sizes, target.size());
    state.cf_history.push_back(state.last_cf);
  } else {
    WeightContext ctx;
    ctx.source_sizes = sizes;
    ctx.target_size = target.size();
    ctx.include_distilled_slot = config.include_distilled_domain;
    ctx.seed = mix_seed(config.seed, "weights", static_cast<uint64_t>(state.sync_index));
    if (config.weighting == WeightStrategy::hdiv_proxy) {
      for (int k = 0; k < K; ++k) ctx.source_inputs.push_back(&sources[k].inputs);
      ctx.target = &target;
    }
    state.alpha = baseline_weights(config.weighting, ctx);
    state.last_cf = CfReport{};
  }

  state.global = aggregate_params(aggregated, state.alpha);

  // BatchNorm moment matching on the aggregated model.
  state.bn_loss = 0.0;
  switch (config.bn_mmd) {
    case BnMmdMode::off:
      break;
    case BnMmdMode::closed_form: {
      std::vector<BnStats> stats;
      stats.reserve(aggregated.size());
      for (const auto* m : aggregated) stats.push_back(extract_bn_stats(*m));
      const BnStats optimum = closed_form_bn_stats(stats, state.alpha);
      state.bn_loss = bn_mmd_loss_at(optimum, stats, state.alpha);
      apply_bn_stats(state.global, optimum);
      break;
    }
    case BnMmdMode::gradient: {
      // Descend the per-batch loss. Only parameters upstream of the BatchNorm
      // features receive gradient (the softmax head sees none), and train-mode
      // forwards keep moving the running statistics toward the target batches.
      std::vector<BnStats> stats;
      stats.reserve(aggregated.size());
      for (const auto* m : aggregated) stats.push_back(extract_bn_stats(*m));

      const StagePlan plan = stage_plan(config, window, target.size());
      const auto windows = batch_windows(target.size(), config.batch_size);
      const int per_epoch = static_cast<int>(windows.size());
      Classifier model{state.arch, state.global};
      ParamGrads velocity = ParamGrads::zeros_like(model.params);
      std::vector<int> order;
      int have_epoch = -1;
      double loss_sum = 0.0;
      const uint64_t seed = mix_seed(config.seed, "moments", static_cast<uint64_t>(window.epoch));
      for (int t = plan.step_offset; t < plan.step_offset + plan.steps; ++t) {
        const int epoch_slot = t / per_epoch;
        if (epoch_slot != have_epoch) {
          order = permutation(target.size(), mix_seed(seed, "perm", epoch_slot));
          have_epoch = epoch_slot;
        }
        const auto [begin, end] = windows[t % per_epoch];
        Matrix batch = gather_rows(target.inputs(), order, begin, end);
        ForwardTrace trace = forward_trace(model, batch, ForwardMode::train);
        std::vector<Matrix> feature_grads;
        loss_sum += bn_mmd_loss(trace.pre_bn, stats, state.alpha, &feature_grads);
        const Matrix dlogits(trace.probs.rows, trace.probs.cols, 0.0);
        const ParamGrads grads = backward(model, trace, dlogits, &feature_grads);
        sgd_step(model.params, velocity, grads, state.lr, config.momentum);
      }
      if (plan.steps > 0) state.bn_loss = loss_sum / plan.steps;
      state.global = model.params;
      break;
    }
  }

  ++state.sync_index;
  state.epoch_progress = window.epoch_end;
  ++state.log.sync_count;
}

TrainingResult run_training(const RoundConfig& config, const std::vector<LabeledDataset>& sources,
                            const UnlabeledDataset& target) {
  config.validate();
  if (sources.empty()) throw std::invalid_argument("run_training: no source domains");
  const Architecture arch{sources[0].dim(), sources[0].num_classes, config.hidden};

  if (!config.checkpoint_dir.empty())
    std::filesystem::create_directories(config.checkpoint_dir);

  RoundState state = init_round_state(arch, config);
  Metrics metrics;
  const int syncs = total_sync_count(config);
  int epochs_recorded = 0;

  for (int j = 0; j < syncs; ++j) {
    kd3a_round(state, sources, target, config);

    while (epochs_recorded + 1 <= state.epoch_progress + 1e-9 &&
           epochs_recorded < config.epochs) {
      ++epochs_recorded;
      const Classifier current{arch, state.global};
      const std::vector<int> preds = predict_classes(current, target.inputs());

      EpochMetrics row;
      row.epoch = epochs_recorded;
      row.target_accuracy = hidden_label_accuracy(target, preds);
      row.gate = state.gate;
      row.lr = state.lr;
      row.alpha = state.alpha.alpha;
      row.cf_raw = state.last_cf.cf_raw;
      row.source_loss = state.source_loss;
      row.kd_loss = state.kd_loss;
      row.bn_loss = state.bn_loss;
      row.bytes_cumulative = state.log.total_bytes;
      metrics.rows.push_back(std::move(row));

      if (!config.checkpoint_dir.empty())
        save_params(config.checkpoint_dir + "/epoch_" + std::to_string(epochs_recorded) + ".kd3a",
                    state.global);
    }
  }

  TrainingResult result{Classifier{arch, state.global}, std::move(metrics), std::move(state.log),
                        std::move(state.cf_history), std::move(state.distill_pairs)};
  return result;
}

}  // namespace kd3a
