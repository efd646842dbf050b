#pragma once

#include <cstdint>
#include <vector>

#include "kd3a/knowledge_vote.hpp"
#include "kd3a/matrix.hpp"
#include "kd3a/synth.hpp"
#include "kd3a/weights.hpp"

namespace kd3a {

// Marginal-contribution report for the K source domains.
struct CfReport {
  double q_full = 0.0;
  std::vector<double> q_leave_one_out;  // Q with domain k removed
  std::vector<double> cf_raw;           // q_full - q_leave_one_out[k]
  std::vector<double> cf_clamped;       // max(cf_raw, 0): what the weights use

  int domain_count() const { return static_cast<int>(cf_raw.size()); }
};

// Total consensus quality of a teacher coalition over the target set:
// sum over samples of n_p * max_c p_c under the coalition-restricted vote.
// Empty coalition scores 0 by convention.
double consensus_quality(const std::vector<Matrix>& teacher_probs,
                         const std::vector<int>& coalition, double gate);
double consensus_quality(const std::vector<Classifier>& teachers, const UnlabeledDataset& target,
                         double gate);

// Full-set quality plus the K leave-one-out evaluations. Needs K >= 2.
CfReport cf_values(const std::vector<Matrix>& teacher_probs, double gate);
CfReport cf_values(const std::vector<Classifier>& teachers, const UnlabeledDataset& target,
                   double gate);

// Consensus-focus weights: the distilled-domain slot gets
// alpha_{K+1} = N_T / (sum N_k + N_T); the source slots split the remainder in
// proportion to N_k * CF_k (clamped). All-zero clamped CF falls back to a
// datasize split of the remainder.
DomainWeights domain_weights_cf(const CfReport& cf, const std::vector<int>& source_sizes,
                                int target_size);

// Inputs the baseline strategies may draw on. Source inputs are only touched
// by hdiv_proxy, which exists as a centralized oracle baseline: it inspects
// raw source data and therefore breaks the decentralization constraint on
// purpose. Callers surface that to the user.
struct WeightContext {
  std::vector<int> source_sizes;
  int target_size = 0;
  bool include_distilled_slot = true;  // false: weights over the K sources only
  std::vector<const Matrix*> source_inputs;  // hdiv_proxy only
  const UnlabeledDataset* target = nullptr;  // hdiv_proxy only
  uint64_t seed = 0;
};

DomainWeights baseline_weights(WeightStrategy strategy, const WeightContext& ctx);

// Logistic two-domain discriminator; returns held-out accuracy (the A-distance
// proxy: 0.5 means indistinguishable).
double domain_discriminator_accuracy(const Matrix& a, const Matrix& b, uint64_t seed);

}  // namespace kd3a
