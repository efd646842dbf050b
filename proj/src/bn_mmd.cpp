#include "kd3a/bn_mmd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "kd3a/kernels.hpp"

namespace kd3a {

namespace {

// batchnorm tensor order: gamma, beta, running mean, running var
constexpr int kRunMean = 2, kRunVar = 3;

void check_same_shape(const BnStats& a, const BnStats& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": stats shape mismatch");
}

}  // namespace

bool BnStats::same_shape(const BnStats& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (size_t l = 0; l < layers.size(); ++l)
    if (layers[l].first.size() != other.layers[l].first.size()) return false;
  return true;
}

BnStats extract_bn_stats(const ModelParams& params) {
  BnStats stats;
  for (const auto& block : params.blocks) {
    if (block.kind != BlockKind::batchnorm) continue;
    const auto& rm = block.tensors[kRunMean].data;
    const auto& rv = block.tensors[kRunVar].data;
    BnLayerStats layer;
    layer.first.resize(rm.size());
    layer.second.resize(rm.size());
    for (size_t c = 0; c < rm.size(); ++c) {
      const double mean = static_cast<double>(rm[c]);
      layer.first[c] = mean;
      layer.second[c] = static_cast<double>(rv[c]) + mean * mean;
    }
    stats.layers.push_back(std::move(layer));
  }
  if (stats.layers.empty())
    throw std::invalid_argument("extract_bn_stats: model has no BatchNorm layers");
  return stats;
}

double quadratic_mmd_distance(const BnLayerStats& a, const BnLayerStats& b) {
  if (a.first.size() != b.first.size() || a.first.size() != a.second.size() ||
      b.first.size() != b.second.size())
    throw std::invalid_argument("quadratic_mmd_distance: channel count mismatch");
  double d = 0.0;
  for (size_t c = 0; c < a.first.size(); ++c) {
    const double d1 = a.first[c] - b.first[c];
    const double d2 = a.second[c] - b.second[c];
    d += d1 * d1 + d2 * d2;
  }
  return d;
}

double quadratic_mmd_distance(const BnStats& a, const BnStats& b) {
  check_same_shape(a, b, "quadratic_mmd_distance");
  double d = 0.0;
  for (size_t l = 0; l < a.layers.size(); ++l)
    d += quadratic_mmd_distance(a.layers[l], b.layers[l]);
  return d;
}

BnLayerStats batch_moments(const Matrix& features) {
  if (features.rows < 2) throw std::invalid_argument("batch_moments: batch size must be >= 2");
  BnLayerStats m;
  std::vector<double> var;
  kernels::column_moments(features, m.first, var);
  m.second.resize(m.first.size());
  // E(x^2) = Var(x) + E(x)^2 with the same summation order as the moments.
  for (size_t c = 0; c < m.first.size(); ++c) m.second[c] = var[c] + m.first[c] * m.first[c];
  return m;
}

double bn_mmd_loss(const std::vector<Matrix>& features, const std::vector<BnStats>& source_stats,
                   const DomainWeights& weights, std::vector<Matrix>* feature_grads) {
  weights.validate();
  if (source_stats.empty() || source_stats.size() != weights.size())
    throw std::invalid_argument("bn_mmd_loss: stats/weight count mismatch");
  const int L = static_cast<int>(features.size());
  for (const auto& s : source_stats) {
    if (s.layer_count() != L) throw std::invalid_argument("bn_mmd_loss: layer count mismatch");
    for (int l = 0; l < L; ++l)
      if (static_cast<int>(s.layers[l].first.size()) != features[l].cols)
        throw std::invalid_argument("bn_mmd_loss: channel count mismatch");
  }

  if (feature_grads) {
    feature_grads->assign(L, Matrix());
  }

  double loss = 0.0;
  for (int l = 0; l < L; ++l) {
    const Matrix& f = features[l];
    const BnLayerStats mom = batch_moments(f);
    const int C = f.cols;
    const int B = f.rows;

    // Accumulated residuals sum_k alpha_k (mu - E_k) and sum_k alpha_k (mu2 - E2_k):
    // both the loss and its gradient factor through them.
    std::vector<double> res1(C, 0.0), res2(C, 0.0);
    for (size_t k = 0; k < source_stats.size(); ++k) {
      const BnLayerStats& s = source_stats[k].layers[l];
      const double a = weights.alpha[k];
      for (int c = 0; c < C; ++c) {
        const double d1 = mom.first[c] - s.first[c];
        const double d2 = mom.second[c] - s.second[c];
        loss += a * (d1 * d1 + d2 * d2);
        res1[c] += a * d1;
        res2[c] += a * d2;
      }
    }

    if (feature_grads) {
      Matrix& g = (*feature_grads)[l];
      g = Matrix(B, C);
      const double invB = 1.0 / B;
      for (int r = 0; r < B; ++r) {
        const double* fr = f.row(r);
        double* gr = g.row(r);
        for (int c = 0; c < C; ++c)
          gr[c] = 2.0 * invB * res1[c] + 4.0 * invB * fr[c] * res2[c];
      }
    }
  }
  return loss;
}

double bn_mmd_loss_at(const BnStats& moments, const std::vector<BnStats>& source_stats,
                      const DomainWeights& weights) {
  weights.validate();
  if (source_stats.empty() || source_stats.size() != weights.size())
    throw std::invalid_argument("bn_mmd_loss_at: stats/weight count mismatch");
  double loss = 0.0;
  for (size_t k = 0; k < source_stats.size(); ++k) {
    check_same_shape(moments, source_stats[k], "bn_mmd_loss_at");
    loss += weights.alpha[k] * quadratic_mmd_distance(moments, source_stats[k]);
  }
  return loss;
}

BnStats closed_form_bn_stats(const std::vector<BnStats>& source_stats,
                             const DomainWeights& weights) {
  weights.validate();
  if (source_stats.empty() || source_stats.size() != weights.size())
    throw std::invalid_argument("closed_form_bn_stats: stats/weight count mismatch");
  for (const auto& s : source_stats) check_same_shape(s, source_stats[0], "closed_form_bn_stats");

  BnStats out;
  out.layers.resize(source_stats[0].layers.size());
  for (size_t l = 0; l < out.layers.size(); ++l) {
    const size_t C = source_stats[0].layers[l].first.size();
    out.layers[l].first.assign(C, 0.0);
    out.layers[l].second.assign(C, 0.0);
    for (size_t k = 0; k < source_stats.size(); ++k) {
      const double a = weights.alpha[k];
      for (size_t c = 0; c < C; ++c) {
        out.layers[l].first[c] += a * source_stats[k].layers[l].first[c];
        out.layers[l].second[c] += a * source_stats[k].layers[l].second[c];
      }
    }
  }
  return out;
}

BnStats closed_form_bn_stats(const std::vector<const ModelParams*>& models,
                             const DomainWeights& weights) {
  std::vector<BnStats> stats;
  stats.reserve(models.size());
  for (const auto* m : models) {
    if (!m) throw std::invalid_argument("closed_form_bn_stats: null model");
    stats.push_back(extract_bn_stats(*m));
  }
  return closed_form_bn_stats(stats, weights);
}

void apply_bn_stats(ModelParams& params, const BnStats& stats) {
  int l = 0;
  for (auto& block : params.blocks) {
    if (block.kind != BlockKind::batchnorm) continue;
    if (l >= stats.layer_count())
      throw std::invalid_argument("apply_bn_stats: more BatchNorm layers than stats");
    auto& rm = block.tensors[kRunMean].data;
    auto& rv = block.tensors[kRunVar].data;
    const BnLayerStats& s = stats.layers[l];
    if (s.first.size() != rm.size())
      throw std::invalid_argument("apply_bn_stats: channel count mismatch");
    for (size_t c = 0; c < rm.size(); ++c) {
      rm[c] = static_cast<float>(s.first[c]);
      rv[c] = static_cast<float>(std::max(s.second[c] - s.first[c] * s.first[c], 0.0));
    }
    ++l;
  }
  if (l == 0) throw std::invalid_argument("apply_bn_stats: model has no BatchNorm layers");
  if (l != stats.layer_count())
    throw std::invalid_argument("apply_bn_stats: fewer BatchNorm layers than stats");
}

}  // namespace kd3a
