#include "kd3a/consensus_focus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "kd3a/rng.hpp"

namespace kd3a {

namespace {

void validate_probs(const std::vector<Matrix>& teacher_probs) {
  if (teacher_probs.empty()) throw std::invalid_argument("consensus quality: no teachers");
  for (const auto& m : teacher_probs)
    if (!m.same_shape(teacher_probs[0]) || m.rows < 1)
      throw std::invalid_argument("consensus quality: teacher output shapes disagree");
}

std::vector<int> full_coalition(int k) {
  std::vector<int> c(k);
  std::iota(c.begin(), c.end(), 0);
  return c;
}

}  // namespace

double consensus_quality(const std::vector<Matrix>& teacher_probs,
                         const std::vector<int>& coalition, double gate) {
  validate_probs(teacher_probs);
  if (coalition.empty()) return 0.0;
  for (int k : coalition)
    if (k < 0 || k >= static_cast<int>(teacher_probs.size()))
      throw std::invalid_argument("consensus quality: coalition index out of range");

  const int n = teacher_probs[0].rows;
  const int C = teacher_probs[0].cols;
  const int K = static_cast<int>(coalition.size());

  std::vector<double> per_sample(n, 0.0);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    TeacherPredictions preds(K, C);
    for (int k = 0; k < K; ++k) {
      const double* src = teacher_probs[coalition[k]].row(i);
      double* dst = preds.row(k);
      for (int c = 0; c < C; ++c) dst[c] = src[c];
    }
    const ConsensusItem item = knowledge_vote(preds, gate);
    per_sample[i] = item.n_p * item.p[item.consensus_class];
  }

  double q = 0.0;
  for (double v : per_sample) q += v;  // fixed order regardless of thread count
  return q;
}

double consensus_quality(const std::vector<Classifier>& teachers, const UnlabeledDataset& target,
                         double gate) {
  const std::vector<Matrix> probs = predict_all(teachers, target.inputs());
  return consensus_quality(probs, full_coalition(static_cast<int>(probs.size())), gate);
}

CfReport cf_values(const std::vector<Matrix>& teacher_probs, double gate) {
  validate_probs(teacher_probs);
  const int K = static_cast<int>(teacher_probs.size());
  if (K < 2) throw std::invalid_argument("cf_values: need at least 2 domains for leave-one-out");

  CfReport report;
  report.q_full = consensus_quality(teacher_probs, full_coalition(K), gate);
  report.q_leave_one_out.resize(K);
  report.cf_raw.resize(K);
  report.cf_clamped.resize(K);
  for (int k = 0; k < K; ++k) {
    std::vector<int> coalition;
    coalition.reserve(K - 1);
    for (int j = 0; j < K; ++j)
      if (j != k) coalition.push_back(j);
    report.q_leave_one_out[k] = consensus_quality(teacher_probs, coalition, gate);
    report.cf_raw[k] = report.q_full - report.q_leave_one_out[k];
    report.cf_clamped[k] = std::max(report.cf_raw[k], 0.0);
  }
  return report;
}

CfReport cf_values(const std::vector<Classifier>& teachers, const UnlabeledDataset& target,
                   double gate) {
  return cf_values(predict_all(teachers, target.inputs()), gate);
}

DomainWeights domain_weights_cf(const CfReport& cf, const std::vector<int>& source_sizes,
                                int target_size) {
  const int K = cf.domain_count();
  if (K < 1 || static_cast<int>(source_sizes.size()) != K)
    throw std::invalid_argument("domain_weights_cf: size list does not match report");
  double total_n = 0.0;
  for (int n : source_sizes) {
    if (n <= 0) throw std::invalid_argument("domain_weights_cf: source sizes must be positive");
    total_n += n;
  }
  if (target_size < 1) throw std::invalid_argument("domain_weights_cf: target size must be positive");

  const double alpha_last = target_size / (total_n + target_size);
  double denom = 0.0;
  for (int k = 0; k < K; ++k) denom += source_sizes[k] * cf.cf_clamped[k];

  DomainWeights w;
  w.alpha.resize(K + 1);
  w.alpha[K] = alpha_last;
  if (denom > 0.0) {
    for (int k = 0; k < K; ++k)
      w.alpha[k] = (1.0 - alpha_last) * source_sizes[k] * cf.cf_clamped[k] / denom;
  } else {
    // Every marginal contribution clamped to zero: nothing to rank by, split
    // the source budget by data size instead.
    for (int k = 0; k < K; ++k) w.alpha[k] = (1.0 - alpha_last) * source_sizes[k] / total_n;
  }

  double sum = 0.0;
  for (double a : w.alpha) sum += a;
  for (double& a : w.alpha) a /= sum;
  w.validate();
  return w;
}

// ---------------------------------------------------------------------------
// Baselines

const char* to_string(WeightStrategy s) {
  switch (s) {
    case WeightStrategy::uniform: return "uniform";
    case WeightStrategy::datasize: return "datasize";
    case WeightStrategy::hdiv_proxy: return "hdiv_proxy";
    case WeightStrategy::consensus_focus: return "consensus_focus";
  }
  throw std::invalid_argument("to_string: unknown weight strategy");
}

WeightStrategy weight_strategy_from_string(const std::string& name) {
  if (name == "uniform") return WeightStrategy::uniform;
  if (name == "datasize") return WeightStrategy::datasize;
  if (name == "hdiv_proxy") return WeightStrategy::hdiv_proxy;
  if (name == "consensus_focus") return WeightStrategy::consensus_focus;
  throw std::invalid_argument("unknown weight strategy: " + name);
}

namespace {

// One 80/20 split: shuffle, fit a quadratic logistic probe on the train rows,
// report held-out accuracy.
double single_split_accuracy(const Matrix& a, const Matrix& b, uint64_t seed) {
  const int n = a.rows + b.rows;
  const int d = a.cols;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);

  const int n_train = std::max(1, std::min(n - 1, static_cast<int>(n * 0.8)));
  auto input_row = [&](int idx) { return idx < a.rows ? a.row(idx) : b.row(idx - a.rows); };
  auto label_of = [&](int idx) { return idx < a.rows ? 0.0 : 1.0; };

  // Quadratic feature map: a linear probe on raw inputs only sees the gap
  // between the two pooled means, which shape-level shifts (rotations,
  // covariance changes) barely move. Pairwise products expose the second
  // moments, where those shifts live.
  const int nf = d + d * (d + 1) / 2;
  auto expand = [&](const double* row, std::vector<double>& out) {
    int f = 0;
    for (int j = 0; j < d; ++j) out[f++] = row[j];
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) out[f++] = row[i] * row[j];
  };

  // Standardize with training-split statistics.
  std::vector<double> mean(nf, 0.0), var(nf, 0.0), feat(nf);
  for (int i = 0; i < n_train; ++i) {
    expand(input_row(order[i]), feat);
    for (int j = 0; j < nf; ++j) mean[j] += feat[j];
  }
  for (double& m : mean) m /= n_train;
  for (int i = 0; i < n_train; ++i) {
    expand(input_row(order[i]), feat);
    for (int j = 0; j < nf; ++j) var[j] += (feat[j] - mean[j]) * (feat[j] - mean[j]);
  }
  std::vector<double> inv_std(nf);
  for (int j = 0; j < nf; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] / n_train + 1e-8);

  std::vector<double> train(static_cast<size_t>(n_train) * nf);
  for (int i = 0; i < n_train; ++i) {
    expand(input_row(order[i]), feat);
    for (int j = 0; j < nf; ++j) train[static_cast<size_t>(i) * nf + j] = (feat[j] - mean[j]) * inv_std[j];
  }

  // Full-batch logistic regression with a light ridge term.
  std::vector<double> w(nf, 0.0);
  double bias = 0.0;
  constexpr int kIters = 400;
  constexpr double kLr = 0.5, kRidge = 1e-4;
  std::vector<double> gw(nf);
  for (int it = 0; it < kIters; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (int i = 0; i < n_train; ++i) {
      const double* f = &train[static_cast<size_t>(i) * nf];
      double z = bias;
      for (int j = 0; j < nf; ++j) z += w[j] * f[j];
      const double err = 1.0 / (1.0 + std::exp(-z)) - label_of(order[i]);
      for (int j = 0; j < nf; ++j) gw[j] += err * f[j];
      gb += err;
    }
    for (int j = 0; j < nf; ++j) w[j] -= kLr * (gw[j] / n_train + kRidge * w[j]);
    bias -= kLr * gb / n_train;
  }

  int hits = 0;
  for (int i = n_train; i < n; ++i) {
    expand(input_row(order[i]), feat);
    double z = bias;
    for (int j = 0; j < nf; ++j) z += w[j] * (feat[j] - mean[j]) * inv_std[j];
    if ((z > 0.0 ? 1.0 : 0.0) == label_of(order[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n - n_train);
}

}  // namespace

double domain_discriminator_accuracy(const Matrix& a, const Matrix& b, uint64_t seed) {
  if (a.cols != b.cols) throw std::invalid_argument("discriminator: dimension mismatch");
  if (a.rows < 2 || b.rows < 2) throw std::invalid_argument("discriminator: need >= 2 rows each");

  // A single 80/20 split judges a domain gap on one small held-out sample;
  // averaging a few resplits keeps one lucky shuffle from swinging the
  // divergence estimate.
  constexpr int kSplits = 5;
  double total = 0.0;
  for (int s = 0; s < kSplits; ++s) total += single_split_accuracy(a, b, mix_seed(seed, "split", s));
  return total / kSplits;
}

DomainWeights baseline_weights(WeightStrategy strategy, const WeightContext& ctx) {
  const int K = static_cast<int>(ctx.source_sizes.size());
  if (K < 1) throw std::invalid_argument("baseline_weights: no source domains");
  double total_n = 0.0;
  for (int nk : ctx.source_sizes) {
    if (nk <= 0) throw std::invalid_argument("baseline_weights: source sizes must be positive");
    total_n += nk;
  }
  if (ctx.target_size < 0) throw std::invalid_argument("baseline_weights: negative target size");

  const int slots = K + (ctx.include_distilled_slot ? 1 : 0);
  const double alpha_last =
      ctx.include_distilled_slot ? ctx.target_size / (total_n + ctx.target_size) : 0.0;

  DomainWeights w;
  w.alpha.assign(slots, 0.0);
  switch (strategy) {
    case WeightStrategy::uniform:
      for (double& a : w.alpha) a = 1.0 / slots;
      break;
    case WeightStrategy::datasize:
      for (int k = 0; k < K; ++k)
        w.alpha[k] = (1.0 - alpha_last) * ctx.source_sizes[k] / total_n;
      if (ctx.include_distilled_slot) w.alpha[K] = alpha_last;
      break;
    case WeightStrategy::hdiv_proxy: {
      if (static_cast<int>(ctx.source_inputs.size()) != K || ctx.target == nullptr)
        throw std::invalid_argument("baseline_weights: hdiv_proxy needs source and target inputs");
      double denom = 0.0;
      std::vector<double> score(K);
      for (int k = 0; k < K; ++k) {
        const double acc = domain_discriminator_accuracy(
            *ctx.source_inputs[k], ctx.target->inputs(), mix_seed(ctx.seed, "hdiv", k));
        const double dh = 2.0 * (2.0 * acc - 1.0);
        score[k] = ctx.source_sizes[k] * std::exp(-dh);
        denom += score[k];
      }
      for (int k = 0; k < K; ++k) w.alpha[k] = (1.0 - alpha_last) * score[k] / denom;
      if (ctx.include_distilled_slot) w.alpha[K] = alpha_last;
      break;
    }
    case WeightStrategy::consensus_focus:
      throw std::invalid_argument(
          "baseline_weights: consensus focus comes from domain_weights_cf during training");
  }

  double sum = 0.0;
  for (double a : w.alpha) sum += a;
  for (double& a : w.alpha) a /= sum;
  w.validate();
  return w;
}

}  // namespace kd3a
