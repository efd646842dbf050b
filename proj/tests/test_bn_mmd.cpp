#include <cmath>
#include <vector>

#include "doctest.h"
#include "kd3a/bn_mmd.hpp"
#include "kd3a/rng.hpp"
#include "oracles.hpp"

using namespace kd3a;

namespace {

Matrix random_features(int rows, int cols, uint64_t seed, double shift = 0.0) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.normal() + shift;
  return m;
}

BnStats stats_of(std::vector<std::vector<double>> first, std::vector<std::vector<double>> second) {
  BnStats s;
  for (size_t l = 0; l < first.size(); ++l)
    s.layers.push_back({std::move(first[l]), std::move(second[l])});
  return s;
}

}  // namespace

TEST_CASE("extract_bn_stats converts running statistics to moment form") {
  const Architecture arch{2, 2, {3, 2}};
  Classifier model = Classifier::init(arch, 1);
  // Layer 0, channel 0: mean 2, var 3 -> first 2, second = 3 + 4 = 7.
  model.params.blocks[1].tensors[2].data = {2.0f, 0.0f, 1.0f};
  model.params.blocks[1].tensors[3].data = {3.0f, 1.0f, 0.5f};
  model.params.blocks[3].tensors[2].data = {0.0f, -1.0f};
  model.params.blocks[3].tensors[3].data = {1.0f, 2.0f};

  const BnStats stats = extract_bn_stats(model.params);
  REQUIRE(stats.layer_count() == 2);
  CHECK(stats.layers[0].first[0] == doctest::Approx(2.0));
  CHECK(stats.layers[0].second[0] == doctest::Approx(7.0));
  CHECK(stats.layers[0].second[1] == doctest::Approx(1.0));
  CHECK(stats.layers[0].second[2] == doctest::Approx(1.5));
  CHECK(stats.layers[1].first[1] == doctest::Approx(-1.0));
  CHECK(stats.layers[1].second[1] == doctest::Approx(3.0));
}

TEST_CASE("quadratic distance hand value and metric properties") {
  const BnStats a = stats_of({{1.0}}, {{2.0}});
  const BnStats b = stats_of({{3.0}}, {{10.0}});
  CHECK(quadratic_mmd_distance(a, b) == doctest::Approx(68.0));  // (1-3)^2 + (2-10)^2
  CHECK(quadratic_mmd_distance(b, a) == doctest::Approx(68.0));  // symmetric
  CHECK(quadratic_mmd_distance(a, a) == doctest::Approx(0.0));   // identical -> 0

  // Summed across layers.
  const BnStats two_a = stats_of({{1.0}, {0.0}}, {{2.0}, {1.0}});
  const BnStats two_b = stats_of({{3.0}, {0.0}}, {{10.0}, {2.0}});
  CHECK(quadratic_mmd_distance(two_a, two_b) == doctest::Approx(69.0));

  const BnStats wide = stats_of({{1.0, 2.0}}, {{2.0, 5.0}});
  CHECK_THROWS(quadratic_mmd_distance(a, wide));  // channel mismatch
}

TEST_CASE("batch_moments matches the direct computation") {
  Matrix f(2, 1);
  f.data = {1.0, 3.0};
  const BnLayerStats m = batch_moments(f);
  CHECK(m.first[0] == doctest::Approx(2.0));
  CHECK(m.second[0] == doctest::Approx(5.0));  // (1 + 9) / 2

  CHECK_THROWS(batch_moments(Matrix(1, 3)));  // needs at least 2 rows
}

TEST_CASE("loss is zero when every source matches the batch moments") {
  const Matrix f = random_features(64, 3, 9);
  const BnLayerStats m = batch_moments(f);
  const BnStats match = stats_of({m.first}, {m.second});
  const double loss =
      bn_mmd_loss({f}, {match, match}, DomainWeights{{0.3, 0.7}});
  CHECK(loss == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("single-source loss reduces to the quadratic distance from batch moments") {
  const Matrix f = random_features(32, 4, 10);
  const BnStats target = stats_of({{0.5, -0.5, 0.0, 1.0}}, {{2.0, 1.0, 1.0, 3.0}});
  const double loss = bn_mmd_loss({f}, {target}, DomainWeights{{1.0}});
  const BnLayerStats m = batch_moments(f);
  CHECK(loss == doctest::Approx(quadratic_mmd_distance(stats_of({m.first}, {m.second}), target))
                    .epsilon(1e-12));
}

TEST_CASE("bn_mmd_loss_at equals the weighted sum of quadratic distances") {
  Rng rng(3);
  const BnStats probe = stats_of({{rng.normal(), rng.normal()}}, {{2.0, 3.0}});
  const BnStats s1 = stats_of({{0.0, 0.0}}, {{1.0, 1.0}});
  const BnStats s2 = stats_of({{1.0, -1.0}}, {{2.0, 2.0}});
  const DomainWeights w{{0.25, 0.75}};
  CHECK(bn_mmd_loss_at(probe, {s1, s2}, w) ==
        doctest::Approx(0.25 * quadratic_mmd_distance(probe, s1) +
                        0.75 * quadratic_mmd_distance(probe, s2))
            .epsilon(1e-12));
}

TEST_CASE("closed form: weighted mean of source moments, hand value") {
  const BnStats s1 = stats_of({{1.0}}, {{2.0}});
  const BnStats s2 = stats_of({{3.0}}, {{10.0}});
  const BnStats opt = closed_form_bn_stats(std::vector<BnStats>{s1, s2},
                                           DomainWeights{{0.25, 0.75}});
  CHECK(opt.layers[0].first[0] == doctest::Approx(2.5));
  CHECK(opt.layers[0].second[0] == doctest::Approx(8.0));

  // One-hot weights copy that source exactly.
  const BnStats copy = closed_form_bn_stats(std::vector<BnStats>{s1, s2},
                                            DomainWeights{{0.0, 1.0}});
  CHECK(copy.layers[0].first[0] == 3.0);
  CHECK(copy.layers[0].second[0] == 10.0);
}

TEST_CASE("closed form minimizes the moment-space objective") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const int K = 1 + rng.uniform_int(4);
    const int L = 1 + rng.uniform_int(2);
    const int C = 1 + rng.uniform_int(4);
    std::vector<BnStats> sources(K);
    for (int k = 0; k < K; ++k)
      for (int l = 0; l < L; ++l) {
        BnLayerStats layer;
        for (int c = 0; c < C; ++c) {
          const double mean = rng.normal();
          layer.first.push_back(mean);
          layer.second.push_back(mean * mean + rng.uniform());
        }
        sources[k].layers.push_back(std::move(layer));
      }
    std::vector<double> raw(K);
    double sum = 0.0;
    for (double& r : raw) {
      r = rng.uniform() + 0.01;
      sum += r;
    }
    DomainWeights w;
    for (double r : raw) w.alpha.push_back(r / sum);

    const BnStats opt = closed_form_bn_stats(sources, w);
    const double at_opt = bn_mmd_loss_at(opt, sources, w);

    // Gradient of the objective vanishes at the optimum: central differences
    // along every moment coordinate.
    double grad_norm_sq = 0.0;
    BnStats probe = opt;
    const double h = 1e-5;
    for (auto& layer : probe.layers) {
      for (auto* vec : {&layer.first, &layer.second}) {
        for (double& x : *vec) {
          const double saved = x;
          x = saved + h;
          const double hi = bn_mmd_loss_at(probe, sources, w);
          x = saved - h;
          const double lo = bn_mmd_loss_at(probe, sources, w);
          x = saved;
          const double g = (hi - lo) / (2.0 * h);
          grad_norm_sq += g * g;
        }
      }
    }
    CHECK(std::sqrt(grad_norm_sq) < 1e-6);

    // And no random perturbation does better.
    for (int p = 0; p < 20; ++p) {
      BnStats other = opt;
      for (auto& layer : other.layers) {
        for (double& x : layer.first) x += 0.2 * rng.normal();
        for (double& x : layer.second) x += 0.2 * rng.normal();
      }
      CHECK(bn_mmd_loss_at(other, sources, w) >= at_opt - 1e-12);
    }
  }
}

TEST_CASE("feature gradients match finite differences") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const int B = 4 + rng.uniform_int(5);
    const int C = 1 + rng.uniform_int(3);
    Matrix f = random_features(B, C, 100 + trial);
    const BnStats s1 = [&] {
      BnStats s;
      BnLayerStats layer;
      for (int c = 0; c < C; ++c) {
        layer.first.push_back(rng.normal());
        layer.second.push_back(1.0 + rng.uniform());
      }
      s.layers.push_back(layer);
      return s;
    }();
    BnStats s2 = s1;
    for (double& x : s2.layers[0].first) x += rng.normal();
    const DomainWeights w{{0.4, 0.6}};

    std::vector<Matrix> grads;
    bn_mmd_loss({f}, {s1, s2}, w, &grads);
    REQUIRE(grads.size() == 1);
    REQUIRE(grads[0].rows == B);
    REQUIRE(grads[0].cols == C);

    for (int i = 0; i < B; ++i)
      for (int c = 0; c < C; ++c) {
        const double numeric = oracle::fd_double(
            f(i, c), [&] { return bn_mmd_loss({f}, {s1, s2}, w); }, 1e-6);
        CHECK(oracle::rel_err(numeric, grads[0](i, c)) < 1e-3);
      }
  }
}

TEST_CASE("apply_bn_stats writes moments back as running statistics") {
  const Architecture arch{2, 2, {3}};
  Classifier model = Classifier::init(arch, 4);
  const BnStats stats = stats_of({{2.0, 0.0, -1.0}}, {{7.0, 1.0, 1.5}});
  apply_bn_stats(model.params, stats);
  CHECK(model.params.blocks[1].tensors[2].data[0] == doctest::Approx(2.0f));
  CHECK(model.params.blocks[1].tensors[3].data[0] == doctest::Approx(3.0f));  // 7 - 4
  CHECK(model.params.blocks[1].tensors[3].data[2] == doctest::Approx(0.5f));

  // Round trip: extract(apply(stats)) == stats.
  const BnStats back = extract_bn_stats(model.params);
  for (int c = 0; c < 3; ++c) {
    CHECK(back.layers[0].first[c] == doctest::Approx(stats.layers[0].first[c]).epsilon(1e-6));
    CHECK(back.layers[0].second[c] == doctest::Approx(stats.layers[0].second[c]).epsilon(1e-6));
  }

  // Degenerate second moment (< first^2) clamps variance at zero.
  const BnStats degenerate = stats_of({{2.0, 0.0, 0.0}}, {{1.0, 1.0, 1.0}});
  apply_bn_stats(model.params, degenerate);
  CHECK(model.params.blocks[1].tensors[3].data[0] == 0.0f);

  const BnStats wrong = stats_of({{1.0}}, {{2.0}});
  CHECK_THROWS(apply_bn_stats(model.params, wrong));
}

TEST_CASE("aggregating parameters then extracting stats averages the moments") {
  // Parameter aggregation averages running_mean and running_var entrywise.
  // In moment form the first moments average exactly; the second moments of
  // the aggregate differ from the averaged seconds by the mean-spread term
  // (Jensen gap), so the averaged seconds dominate.
  const Architecture arch{2, 2, {2}};
  Classifier a = Classifier::init(arch, 1);
  Classifier b = Classifier::init(arch, 2);
  a.params.blocks[1].tensors[2].data = {1.0f, 0.0f};
  a.params.blocks[1].tensors[3].data = {1.0f, 2.0f};
  b.params.blocks[1].tensors[2].data = {3.0f, 0.0f};
  b.params.blocks[1].tensors[3].data = {5.0f, 2.0f};

  const ModelParams mixed = blend_params(a.params, b.params, 0.5);
  const BnStats mixed_stats = extract_bn_stats(mixed);
  CHECK(mixed_stats.layers[0].first[0] == doctest::Approx(2.0));  // (1 + 3) / 2

  const BnStats avg = closed_form_bn_stats({extract_bn_stats(a.params), extract_bn_stats(b.params)},
                                           DomainWeights{{0.5, 0.5}});
  CHECK(avg.layers[0].first[0] == doctest::Approx(2.0));
  // Aggregate second = 3 + 4 = 7; averaged seconds = (2 + 14) / 2 = 8.
  CHECK(mixed_stats.layers[0].second[0] == doctest::Approx(7.0));
  CHECK(avg.layers[0].second[0] == doctest::Approx(8.0));
  CHECK(mixed_stats.layers[0].second[0] <= avg.layers[0].second[0] + 1e-12);
  // Where the means agree the two routes coincide.
  CHECK(mixed_stats.layers[0].second[1] == doctest::Approx(avg.layers[0].second[1]));
}
