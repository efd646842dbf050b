#pragma once

#include <vector>

#include "kd3a/matrix.hpp"
#include "kd3a/nn.hpp"
#include "kd3a/weights.hpp"

namespace kd3a {

// Per-channel moment pair of one BatchNorm layer's input feature:
// first = E(pi), second = E(pi^2) = Var(pi) + E(pi)^2.
struct BnLayerStats {
  std::vector<double> first;
  std::vector<double> second;
};

struct BnStats {
  std::vector<BnLayerStats> layers;

  int layer_count() const { return static_cast<int>(layers.size()); }
  bool same_shape(const BnStats& other) const;
};

// Reads (running_mean, running_var) out of every BatchNorm block and converts
// to moment form. Rejects models without BatchNorm.
BnStats extract_bn_stats(const ModelParams& params);

// Quadratic-kernel MMD between two moment pairs:
// ||first_a - first_b||^2 + ||second_a - second_b||^2.
double quadratic_mmd_distance(const BnLayerStats& a, const BnLayerStats& b);
double quadratic_mmd_distance(const BnStats& a, const BnStats& b);  // summed over layers

// Moments of a feature batch: column means of the values and of their squares.
BnLayerStats batch_moments(const Matrix& features);

// Weighted moment-matching loss of a target feature batch against K+1 source
// stats: sum over layers and sources of
//   alpha_k * (||mu - E_k||^2 + ||mu2 - E2_k||^2)
// where (mu, mu2) are the batch moments. When feature_grads is non-null it
// receives d loss / d features (through the batch moments). Batch size >= 2.
double bn_mmd_loss(const std::vector<Matrix>& features, const std::vector<BnStats>& source_stats,
                   const DomainWeights& weights, std::vector<Matrix>* feature_grads = nullptr);

// Loss evaluated at explicit moment values instead of a feature batch — the
// objective the closed-form update minimizes over moment space.
double bn_mmd_loss_at(const BnStats& moments, const std::vector<BnStats>& source_stats,
                      const DomainWeights& weights);

// The minimizer of bn_mmd_loss_at over moment space: the alpha-weighted
// average of the source moments, layer by layer.
BnStats closed_form_bn_stats(const std::vector<BnStats>& source_stats,
                             const DomainWeights& weights);
BnStats closed_form_bn_stats(const std::vector<const ModelParams*>& models,
                             const DomainWeights& weights);

// Writes moments back into the model: running_mean = first,
// running_var = max(second - first^2, 0).
void apply_bn_stats(ModelParams& params, const BnStats& stats);

}  // namespace kd3a
