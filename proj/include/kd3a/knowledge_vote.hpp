#pragma once

#include <span>
#include <vector>

#include "kd3a/matrix.hpp"
#include "kd3a/nn.hpp"
#include "kd3a/synth.hpp"

namespace kd3a {

// One sample's teacher outputs: K rows, each a class distribution.
using TeacherPredictions = Matrix;

// Consensus knowledge for one target sample: distribution p and its support
// count n_p. n_p is the number of agreeing confident teachers, or 0.001 when
// every teacher was eliminated and p fell back to the plain mean ensemble.
struct ConsensusItem {
  std::vector<double> p;
  double n_p = 0.0;
  int consensus_class = 0;
};

inline constexpr double kFallbackSupport = 0.001;

// Step 1: teacher k survives iff max_c q^k_c >= g. Returns indices, ascending.
std::vector<int> confidence_gate(const TeacherPredictions& preds, double gate);

struct ClassVote {
  int consensus_class = 0;
  std::vector<int> supporters;  // survivors whose own argmax is the consensus class
};

// Step 2: sum the surviving rows, take the argmax (ties to the lowest class),
// drop survivors that disagree with it. Throws on an empty survivor set.
ClassVote consensus_class_vote(const TeacherPredictions& preds,
                               const std::vector<int>& survivors);

// Steps 1-3. Supporters present: p = mean of supporter rows, n_p = count.
// Nobody past the gate (or nobody backing the voted class): p = mean of all
// rows, n_p = 0.001.
ConsensusItem knowledge_vote(const TeacherPredictions& preds, double gate);

// Same vote restricted to a subset of teachers; rows outside the coalition do
// not exist as far as the vote is concerned.
ConsensusItem knowledge_vote(const TeacherPredictions& preds, const std::vector<int>& coalition,
                             double gate);

// Eval-mode class probabilities for each teacher over the full input set.
std::vector<Matrix> predict_all(const std::vector<Classifier>& teachers, const Matrix& inputs);

// The distilled source domain: consensus items aligned one-to-one with the
// target inputs. It references the target dataset rather than copying it, so
// the two provably share an input space.
struct ExtendedDomain {
  const UnlabeledDataset* target = nullptr;
  std::vector<ConsensusItem> items;
  double gate = 0.0;

  int size() const { return static_cast<int>(items.size()); }
};

ExtendedDomain build_extended_domain(const UnlabeledDataset& target,
                                     const std::vector<Classifier>& teachers, double gate);
// Same, from already-computed per-teacher probability matrices (N x C each).
ExtendedDomain build_extended_domain(const UnlabeledDataset& target,
                                     const std::vector<Matrix>& teacher_probs, double gate);

// Mean-ensemble variant with n_p = 1 everywhere: the vote ablation.
ExtendedDomain build_mean_ensemble_domain(const UnlabeledDataset& target,
                                          const std::vector<Classifier>& teachers);
ExtendedDomain build_mean_ensemble_domain(const UnlabeledDataset& target,
                                          const std::vector<Matrix>& teacher_probs);

double weighted_kd_loss(const ConsensusItem& item, std::span<const double> q);

}  // namespace kd3a
