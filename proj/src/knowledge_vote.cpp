#include "kd3a/knowledge_vote.hpp"

#include <cmath>
#include <stdexcept>

namespace kd3a {

namespace {

void validate_preds(const TeacherPredictions& preds) {
  if (preds.rows < 1 || preds.cols < 2)
    throw std::invalid_argument("knowledge vote: need >= 1 teacher and >= 2 classes");
  for (int k = 0; k < preds.rows; ++k) {
    double sum = 0.0;
    const double* row = preds.row(k);
    for (int c = 0; c < preds.cols; ++c) {
      if (!(row[c] >= 0.0)) throw std::invalid_argument("knowledge vote: negative probability");
      sum += row[c];
    }
    if (std::abs(sum - 1.0) > 1e-4)
      throw std::invalid_argument("knowledge vote: teacher row off the simplex");
  }
}

void validate_gate(double gate) {
  if (!(gate >= 0.0) || gate >= 1.0)
    throw std::invalid_argument("knowledge vote: gate must lie in [0, 1)");
}

ConsensusItem mean_of(const TeacherPredictions& preds, const std::vector<int>& rows,
                      double support) {
  ConsensusItem item;
  item.p.assign(preds.cols, 0.0);
  for (int k : rows) {
    const double* row = preds.row(k);
    for (int c = 0; c < preds.cols; ++c) item.p[c] += row[c];
  }
  for (double& v : item.p) v /= static_cast<double>(rows.size());
  item.n_p = support;
  item.consensus_class = argmax_row(item.p.data(), preds.cols);
  return item;
}

std::vector<int> all_rows(int n) {
  std::vector<int> rows(n);
  for (int i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

ConsensusItem vote_over(const TeacherPredictions& preds, const std::vector<int>& coalition,
                        double gate) {
  std::vector<int> survivors;
  for (int k : coalition) {
    const double* row = preds.row(k);
    double best = row[0];
    for (int c = 1; c < preds.cols; ++c) best = std::max(best, row[c]);
    if (best >= gate) survivors.push_back(k);
  }

  if (!survivors.empty()) {
    ClassVote vote = consensus_class_vote(preds, survivors);
    // The voted class can fail to be any survivor's own argmax (their top
    // choices cancel in the sum); nobody backs it, so fall through to the
    // low-weight ensemble exactly as if the gate had eliminated everyone.
    if (!vote.supporters.empty())
      return mean_of(preds, vote.supporters, static_cast<double>(vote.supporters.size()));
  }
  return mean_of(preds, coalition, kFallbackSupport);
}

}  // namespace

std::vector<int> confidence_gate(const TeacherPredictions& preds, double gate) {
  validate_preds(preds);
  validate_gate(gate);
  std::vector<int> survivors;
  for (int k = 0; k < preds.rows; ++k) {
    const double* row = preds.row(k);
    double best = row[0];
    for (int c = 1; c < preds.cols; ++c) best = std::max(best, row[c]);
    if (best >= gate) survivors.push_back(k);
  }
  return survivors;
}

ClassVote consensus_class_vote(const TeacherPredictions& preds,
                               const std::vector<int>& survivors) {
  if (survivors.empty())
    throw std::invalid_argument("consensus_class_vote: empty survivor set");
  std::vector<double> sum(preds.cols, 0.0);
  for (int k : survivors) {
    if (k < 0 || k >= preds.rows)
      throw std::invalid_argument("consensus_class_vote: survivor index out of range");
    const double* row = preds.row(k);
    for (int c = 0; c < preds.cols; ++c) sum[c] += row[c];
  }
  ClassVote vote;
  vote.consensus_class = argmax_row(sum.data(), preds.cols);
  for (int k : survivors)
    if (argmax_row(preds.row(k), preds.cols) == vote.consensus_class)
      vote.supporters.push_back(k);
  return vote;
}

ConsensusItem knowledge_vote(const TeacherPredictions& preds, double gate) {
  validate_preds(preds);
  validate_gate(gate);
  return vote_over(preds, all_rows(preds.rows), gate);
}

ConsensusItem knowledge_vote(const TeacherPredictions& preds, const std::vector<int>& coalition,
                             double gate) {
  validate_preds(preds);
  validate_gate(gate);
  if (coalition.empty()) throw std::invalid_argument("knowledge vote: empty coalition");
  for (int k : coalition)
    if (k < 0 || k >= preds.rows)
      throw std::invalid_argument("knowledge vote: coalition index out of range");
  return vote_over(preds, coalition, gate);
}

std::vector<Matrix> predict_all(const std::vector<Classifier>& teachers, const Matrix& inputs) {
  if (teachers.empty()) throw std::invalid_argument("predict_all: no teachers");
  std::vector<Matrix> probs(teachers.size());
  for (size_t k = 0; k < teachers.size(); ++k) probs[k] = predict_probs(teachers[k], inputs);
  return probs;
}

namespace {

ExtendedDomain assemble_domain(const UnlabeledDataset& target, const std::vector<Matrix>& probs,
                               double gate, bool mean_ensemble) {
  if (probs.empty()) throw std::invalid_argument("extended domain: no teachers");
  const int num_classes = probs[0].cols;
  for (const auto& m : probs)
    if (!m.same_shape(probs[0]) || m.rows != target.size())
      throw std::invalid_argument("extended domain: teacher output shapes disagree");

  const int n = target.size();
  const int K = static_cast<int>(probs.size());

  ExtendedDomain dom;
  dom.target = &target;
  dom.gate = gate;
  dom.items.resize(n);

#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    TeacherPredictions preds(K, num_classes);
    for (int k = 0; k < K; ++k) {
      const double* src = probs[k].row(i);
      double* dst = preds.row(k);
      for (int c = 0; c < num_classes; ++c) dst[c] = src[c];
    }
    if (mean_ensemble) {
      ConsensusItem item;
      item.p.assign(num_classes, 0.0);
      for (int k = 0; k < K; ++k)
        for (int c = 0; c < num_classes; ++c) item.p[c] += preds(k, c);
      for (double& v : item.p) v /= K;
      item.n_p = 1.0;
      item.consensus_class = argmax_row(item.p.data(), num_classes);
      dom.items[i] = std::move(item);
    } else {
      dom.items[i] = knowledge_vote(preds, gate);
    }
  }
  return dom;
}

}  // namespace

ExtendedDomain build_extended_domain(const UnlabeledDataset& target,
                                     const std::vector<Classifier>& teachers, double gate) {
  return build_extended_domain(target, predict_all(teachers, target.inputs()), gate);
}

ExtendedDomain build_extended_domain(const UnlabeledDataset& target,
                                     const std::vector<Matrix>& teacher_probs, double gate) {
  validate_gate(gate);
  return assemble_domain(target, teacher_probs, gate, /*mean_ensemble=*/false);
}

ExtendedDomain build_mean_ensemble_domain(const UnlabeledDataset& target,
                                          const std::vector<Classifier>& teachers) {
  return build_mean_ensemble_domain(target, predict_all(teachers, target.inputs()));
}

ExtendedDomain build_mean_ensemble_domain(const UnlabeledDataset& target,
                                          const std::vector<Matrix>& teacher_probs) {
  return assemble_domain(target, teacher_probs, 0.0, /*mean_ensemble=*/true);
}

double weighted_kd_loss(const ConsensusItem& item, std::span<const double> q) {
  return weighted_kd_loss(item.n_p, std::span<const double>(item.p), q);
}

}  // namespace kd3a
