#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "kd3a/federation.hpp"
#include "kd3a/rng.hpp"

using namespace kd3a;

namespace {

// A small, easily separable two-source problem for fast training tests.
struct TinyProblem {
  std::vector<LabeledDataset> sources;
  UnlabeledDataset target;
  Architecture arch;
};

TinyProblem tiny_problem(uint64_t seed, int per_domain = 60) {
  DomainSpec spec;
  spec.num_classes = 2;
  spec.input_dim = 3;
  spec.class_means = make_class_geometry(2, 3, 2.5, 7);
  spec.cov_scale = 0.4;
  spec.sample_count = per_domain;

  TinyProblem p;
  spec.seed = mix_seed(seed, "s0");
  p.sources.push_back(generate_domain(spec));
  spec.rotation_angle = 0.3;
  spec.seed = mix_seed(seed, "s1");
  p.sources.push_back(generate_domain(spec));
  spec.rotation_angle = 0.0;
  spec.seed = mix_seed(seed, "t");
  p.target = as_target(generate_domain(spec));
  p.arch = Architecture{3, 2, {8}};
  return p;
}

RoundConfig tiny_config(uint64_t seed, int epochs = 4) {
  RoundConfig rc;
  rc.epochs = epochs;
  rc.batch_size = 10;
  rc.hidden = {8};
  rc.seed = seed;
  return rc;
}

bool same_metrics(const Metrics& a, const Metrics& b) {
  if (a.rows.size() != b.rows.size()) return false;
  for (size_t i = 0; i < a.rows.size(); ++i) {
    const auto& x = a.rows[i];
    const auto& y = b.rows[i];
    if (x.epoch != y.epoch || x.target_accuracy != y.target_accuracy || x.gate != y.gate ||
        x.lr != y.lr || x.alpha != y.alpha || x.cf_raw != y.cf_raw ||
        x.source_loss != y.source_loss || x.kd_loss != y.kd_loss || x.bn_loss != y.bn_loss ||
        x.bytes_cumulative != y.bytes_cumulative)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("confidence gate ramps linearly between its endpoints") {
  CHECK(confidence_gate_schedule(0, 30, 0.8, 0.95) == doctest::Approx(0.8));
  CHECK(confidence_gate_schedule(30, 30, 0.8, 0.95) == doctest::Approx(0.95));
  CHECK(confidence_gate_schedule(15, 30, 0.8, 0.95) == doctest::Approx(0.875));
  CHECK(confidence_gate_schedule(45, 30, 0.8, 0.95) == doctest::Approx(0.95));  // clamped
  CHECK(confidence_gate_schedule(-1, 30, 0.8, 0.95) == doctest::Approx(0.8));
  for (int e = 1; e <= 30; ++e)
    CHECK(confidence_gate_schedule(e, 30, 0.8, 0.95) >=
          confidence_gate_schedule(e - 1, 30, 0.8, 0.95));
}

TEST_CASE("round config validation") {
  RoundConfig rc;
  CHECK_NOTHROW(rc.validate());
  rc.epochs = 0;
  CHECK_THROWS(rc.validate());
  rc = RoundConfig{};
  rc.sync_rate = 0.0;
  CHECK_THROWS(rc.validate());
  rc = RoundConfig{};
  rc.gate_lo = 0.97;  // above gate_hi
  CHECK_THROWS(rc.validate());
  rc = RoundConfig{};
  rc.gate_hi = 1.0;
  CHECK_THROWS(rc.validate());
  rc = RoundConfig{};
  rc.batch_size = 1;
  CHECK_THROWS(rc.validate());
  rc = RoundConfig{};
  rc.weighting = WeightStrategy::consensus_focus;
  rc.include_distilled_domain = false;  // CF needs the distilled slot
  CHECK_THROWS(rc.validate());
}

TEST_CASE("local_train_stage: zero steps return the initial parameters") {
  const TinyProblem p = tiny_problem(1);
  const ModelParams init = Classifier::init(p.arch, 5).params;
  const ModelParams out =
      local_train_stage(p.arch, p.sources[0], init, 0.05, 0.9, 10, 0, 0, 42);
  CHECK(serialize_params(out) == serialize_params(init));
}

TEST_CASE("local_train_stage is deterministic and seed-sensitive") {
  const TinyProblem p = tiny_problem(2);
  const ModelParams init = Classifier::init(p.arch, 5).params;
  double loss1 = 0.0, loss2 = 0.0, loss3 = 0.0;
  const ModelParams a =
      local_train_stage(p.arch, p.sources[0], init, 0.05, 0.9, 10, 6, 0, 42, &loss1);
  const ModelParams b =
      local_train_stage(p.arch, p.sources[0], init, 0.05, 0.9, 10, 6, 0, 42, &loss2);
  const ModelParams c =
      local_train_stage(p.arch, p.sources[0], init, 0.05, 0.9, 10, 6, 0, 43, &loss3);
  CHECK(serialize_params(a) == serialize_params(b));
  CHECK(loss1 == loss2);
  CHECK(serialize_params(a) != serialize_params(c));
}

TEST_CASE("local training reduces the classification loss on separable data") {
  int improved = 0;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const TinyProblem p = tiny_problem(10 + seed);
    const ModelParams init = Classifier::init(p.arch, 100 + seed).params;
    double first = 0.0, later = 0.0;
    const ModelParams mid =
        local_train_stage(p.arch, p.sources[0], init, 0.05, 0.9, 10, 6, 0, 7, &first);
    ModelParams out = mid;
    for (int stage = 1; stage < 8; ++stage)
      out = local_train_stage(p.arch, p.sources[0], out, 0.05, 0.9, 10, 6, stage * 6, 7, &later);
    if (later < first) ++improved;
  }
  CHECK(improved >= 4);  // allow one unlucky seed
}

TEST_CASE("total_sync_count for whole and fractional rates") {
  RoundConfig rc = tiny_config(0, 40);
  rc.sync_rate = 1.0;
  CHECK(total_sync_count(rc) == 40);
  rc.sync_rate = 2.0;
  CHECK(total_sync_count(rc) == 80);
  rc.sync_rate = 0.5;
  CHECK(total_sync_count(rc) == 20);
  rc.sync_rate = 0.2;
  CHECK(total_sync_count(rc) == 8);
  rc.epochs = 7;
  rc.sync_rate = 0.5;
  CHECK(total_sync_count(rc) == 4);  // ceil(7 / 2): the last short window still syncs
}

TEST_CASE("upload accounting: K uploads per sync, bytes = uploads x payload") {
  const TinyProblem p = tiny_problem(3);
  RoundConfig rc = tiny_config(11, 6);

  const size_t payload = serialize_params(Classifier::init(p.arch, 0).params).size();

  for (const double rate : {1.0, 0.5, 2.0}) {
    rc.sync_rate = rate;
    const TrainingResult result = run_training(rc, p.sources, p.target);
    const int syncs = total_sync_count(rc);
    CHECK(static_cast<int>(result.log.uploads.size()) == 2 * syncs);
    CHECK(result.log.total_bytes == result.log.uploads.size() * payload);
    CHECK(result.log.sync_count == syncs);
    for (const UploadRecord& u : result.log.uploads) {
      CHECK(u.bytes == payload);
      CHECK(u.source >= 0);
      CHECK(u.source < 2);
    }
    // Metrics carry cumulative bytes; the last row accounts for everything.
    CHECK(result.metrics.rows.back().bytes_cumulative == result.log.total_bytes);
  }
}

TEST_CASE("two identical sources receive equal consensus weights") {
  DomainSpec spec;
  spec.num_classes = 2;
  spec.input_dim = 3;
  spec.class_means = make_class_geometry(2, 3, 2.5, 7);
  spec.cov_scale = 0.4;
  spec.sample_count = 60;
  spec.seed = 99;
  const LabeledDataset domain = generate_domain(spec);
  spec.seed = 98;
  const UnlabeledDataset target = as_target(generate_domain(spec));

  // The same dataset twice. Batch orders derive from the shared sync seed,
  // so identical silos train identically and the symmetry is exact.
  const std::vector<LabeledDataset> sources = {domain, domain};
  RoundConfig rc = tiny_config(5, 3);
  const TrainingResult result = run_training(rc, sources, target);
  const auto& alpha = result.metrics.rows.back().alpha;
  REQUIRE(alpha.size() == 3);
  CHECK(std::abs(alpha[0] - alpha[1]) < 1e-6);
}

TEST_CASE("training runs are deterministic given config and seed") {
  const TinyProblem p = tiny_problem(4);
  RoundConfig rc = tiny_config(21, 3);
  const TrainingResult a = run_training(rc, p.sources, p.target);
  const TrainingResult b = run_training(rc, p.sources, p.target);
  CHECK(same_metrics(a.metrics, b.metrics));
  CHECK(serialize_params(a.model.params) == serialize_params(b.model.params));

  rc.seed = 22;
  const TrainingResult c = run_training(rc, p.sources, p.target);
  CHECK_FALSE(same_metrics(a.metrics, c.metrics));
}

TEST_CASE("every strategy knob produces a running configuration") {
  const TinyProblem p = tiny_problem(6);
  for (const BnMmdMode mode : {BnMmdMode::closed_form, BnMmdMode::gradient, BnMmdMode::off}) {
    RoundConfig rc = tiny_config(31, 2);
    rc.bn_mmd = mode;
    const TrainingResult result = run_training(rc, p.sources, p.target);
    CHECK(result.metrics.rows.size() == 2);
  }
  RoundConfig rc = tiny_config(32, 2);
  rc.use_knowledge_vote = false;
  CHECK(run_training(rc, p.sources, p.target).metrics.rows.size() == 2);

  rc = tiny_config(33, 2);
  rc.weighting = WeightStrategy::uniform;
  rc.include_distilled_domain = false;
  const TrainingResult bare = run_training(rc, p.sources, p.target);
  REQUIRE(bare.metrics.rows.size() == 2);
  CHECK(bare.metrics.rows.back().alpha.size() == 2);  // no distilled slot
  CHECK(bare.metrics.rows.back().alpha[0] == doctest::Approx(0.5));

  rc = tiny_config(34, 2);
  rc.weighting = WeightStrategy::hdiv_proxy;
  CHECK(run_training(rc, p.sources, p.target).metrics.rows.size() == 2);
}

TEST_CASE("epoch metrics carry schedules and improve accuracy on easy data") {
  const TinyProblem p = tiny_problem(8, 80);
  RoundConfig rc = tiny_config(41, 6);
  const TrainingResult result = run_training(rc, p.sources, p.target);
  REQUIRE(result.metrics.rows.size() == 6);
  for (int e = 0; e < 6; ++e) {
    CHECK(result.metrics.rows[e].epoch == e + 1);
    CHECK(result.metrics.rows[e].gate >= rc.gate_lo);
    CHECK(result.metrics.rows[e].gate <= rc.gate_hi);
    CHECK(result.metrics.rows[e].lr <= rc.lr_hi);
    CHECK(result.metrics.rows[e].lr >= rc.lr_lo);
  }
  // Separable blobs with matching target: the run must beat chance clearly.
  CHECK(result.metrics.rows.back().target_accuracy > 0.8);
  // Consensus-focus history is recorded per sync.
  CHECK(result.cf_history.size() == static_cast<size_t>(total_sync_count(rc)));
}

TEST_CASE("checkpoints are written per epoch and load back") {
  const TinyProblem p = tiny_problem(9);
  RoundConfig rc = tiny_config(51, 3);
  const auto dir = std::filesystem::temp_directory_path() / "kd3a_ckpt_test";
  std::filesystem::remove_all(dir);
  rc.checkpoint_dir = dir.string();
  const TrainingResult result = run_training(rc, p.sources, p.target);
  for (int e = 1; e <= 3; ++e) {
    const auto path = dir / ("epoch_" + std::to_string(e) + ".kd3a");
    REQUIRE(std::filesystem::exists(path));
    const ModelParams loaded = load_params(path.string());
    CHECK(loaded.same_manifest(result.model.params));
  }
  // The final checkpoint holds the final model exactly.
  const ModelParams last = load_params((dir / "epoch_3.kd3a").string());
  CHECK(serialize_params(last) == serialize_params(result.model.params));
  std::filesystem::remove_all(dir);
}

TEST_CASE("distill stage moves the student toward the consensus distribution") {
  const TinyProblem p = tiny_problem(12, 80);

  // Confident teachers trained on the two sources.
  std::vector<Classifier> teachers;
  for (int k = 0; k < 2; ++k) {
    ModelParams params = Classifier::init(p.arch, 60 + k).params;
    for (int stage = 0; stage < 10; ++stage)
      params = local_train_stage(p.arch, p.sources[k], params, 0.05, 0.9, 10, 8, stage * 8,
                                 70 + k);
    teachers.push_back(Classifier{p.arch, std::move(params)});
  }
  const ExtendedDomain dom = build_extended_domain(p.target, teachers, 0.5);

  Classifier student = Classifier::init(p.arch, 80);
  double first = 0.0, later = 0.0;
  ModelParams trained = distill_train_stage(p.arch, dom, student.params, 0.05, 0.9, 10, 8, 0, 81,
                                            &first);
  for (int stage = 1; stage < 6; ++stage)
    trained = distill_train_stage(p.arch, dom, trained, 0.05, 0.9, 10, 8, stage * 8, 81, &later);
  CHECK(later < first);

  // Diagnostics logging captures (p, q, n_p) triples when requested.
  std::vector<DistillPair> pairs;
  distill_train_stage(p.arch, dom, student.params, 0.05, 0.9, 10, 4, 0, 81, nullptr, &pairs);
  CHECK(!pairs.empty());
  for (const DistillPair& pair : pairs) {
    CHECK(pair.p.size() == 2);
    CHECK(pair.q.size() == 2);
    CHECK(pair.n_p > 0.0);
  }
}

TEST_CASE("kd3a_round rejects mismatched inputs") {
  const TinyProblem p = tiny_problem(13);
  RoundConfig rc = tiny_config(61, 2);
  RoundState state = init_round_state(p.arch, rc);

  std::vector<LabeledDataset> bad = p.sources;
  bad[1].inputs = Matrix(bad[1].inputs.rows, 5);  // wrong dimension
  CHECK_THROWS(kd3a_round(state, bad, p.target, rc));

  // Consensus focus needs at least two sources.
  const std::vector<LabeledDataset> one = {p.sources[0]};
  RoundState fresh = init_round_state(p.arch, rc);
  CHECK_THROWS(kd3a_round(fresh, one, p.target, rc));
}
