#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kd3a/matrix.hpp"
#include "kd3a/rng.hpp"
#include "kd3a/synth.hpp"
#include "kd3a/weights.hpp"

namespace kd3a {

inline constexpr double kEpsilonKl = 1e-8;   // lower clamp inside KL logs
inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.1;

// ---------------------------------------------------------------------------
// Parameters

enum class BlockKind : uint8_t { linear = 0, batchnorm = 1 };

struct TensorShape {
  uint32_t rows = 0;
  uint32_t cols = 1;
  bool operator==(const TensorShape&) const = default;
  size_t count() const { return static_cast<size_t>(rows) * cols; }
};

// Parameters are float32: that pins the wire format. All arithmetic on them
// is carried out in double and rounded back on store.
struct Tensor {
  TensorShape shape;
  std::vector<float> data;
};

// linear: {weight (out x in), bias (out)}
// batchnorm: {gamma, beta, running_mean, running_var} (channel each)
struct ParamBlock {
  BlockKind kind = BlockKind::linear;
  std::vector<Tensor> tensors;
};

struct ModelParams {
  std::vector<ParamBlock> blocks;

  bool same_manifest(const ModelParams& other) const;
  size_t scalar_count() const;
  std::string manifest_string() const;
};

// Gradient/velocity twin of ModelParams, double precision.
struct ParamGrads {
  std::vector<std::vector<std::vector<double>>> blocks;

  static ParamGrads zeros_like(const ModelParams& params);
  void add_scaled(const ParamGrads& other, double scale);
  double max_abs() const;
};

// ---------------------------------------------------------------------------
// Classifier: input -> [linear -> batchnorm -> relu] x L -> linear -> softmax

struct Architecture {
  int input_dim = 2;
  int num_classes = 2;
  std::vector<int> hidden = {32, 32, 32};

  int bn_layer_count() const { return static_cast<int>(hidden.size()); }
};

struct Classifier {
  Architecture arch;
  ModelParams params;

  static Classifier init(const Architecture& arch, uint64_t seed);
};

enum class ForwardMode { train, eval };

struct ForwardResult {
  Matrix probs;                     // rows on the class simplex
  std::vector<Matrix> bn_features;  // pre-normalization activations, one per BN layer
};

// Train mode normalizes with batch statistics and advances the running
// estimates; the model must not be shared across threads while doing so.
// Eval mode reads the stored running statistics and leaves the model alone.
ForwardResult forward(Classifier& model, const Matrix& batch, ForwardMode mode);
ForwardResult infer(const Classifier& model, const Matrix& batch);

Matrix predict_probs(const Classifier& model, const Matrix& inputs);
std::vector<int> predict_classes(const Classifier& model, const Matrix& inputs);
int argmax_row(const double* row, int n);  // ties resolve to the lowest index

// Full activation record for backpropagation.
struct ForwardTrace {
  ForwardMode mode = ForwardMode::train;
  Matrix input;
  std::vector<Matrix> pre_bn;    // feature entering each BN layer
  std::vector<Matrix> xhat;      // normalized feature
  std::vector<Matrix> post_act;  // activation leaving each block
  std::vector<std::vector<double>> bn_mean, bn_var;  // statistics used
  Matrix logits;
  Matrix probs;
};

ForwardTrace forward_trace(Classifier& model, const Matrix& batch, ForwardMode mode,
                           bool update_running = true);

// dlogits seeds the softmax head; bn_feature_grads, when given, inject extra
// gradient at each BN layer's input feature (used by the moment-matching loss).
ParamGrads backward(const Classifier& model, const ForwardTrace& trace, const Matrix& dlogits,
                    const std::vector<Matrix>* bn_feature_grads = nullptr);

// ---------------------------------------------------------------------------
// Losses

double kl_divergence(std::span<const double> p, std::span<const double> q);
double weighted_kd_loss(double support, std::span<const double> p, std::span<const double> q);

double cross_entropy_loss(const Matrix& probs, const std::vector<int>& labels);
Matrix ce_grad_logits(const Matrix& probs, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Optimization

void sgd_step(ModelParams& params, ParamGrads& velocity, const ParamGrads& grads, double lr,
              double momentum = 0.9);

double cosine_lr(double epoch, double total_epochs, double lr_hi, double lr_lo);

// ---------------------------------------------------------------------------
// Aggregation & evaluation

ModelParams aggregate_params(const std::vector<const ModelParams*>& models,
                             const DomainWeights& weights);
ModelParams aggregate_params(const std::vector<ModelParams>& models, const DomainWeights& weights);

// Elementwise p1 * w + p2 * (1 - w); manifests must match.
ModelParams blend_params(const ModelParams& a, const ModelParams& b, double weight_a);

double empirical_task_risk(const Classifier& model, const LabeledDataset& dataset);

// ---------------------------------------------------------------------------
// Wire format: magic "KD3A", version u16, block manifest, little-endian f32
// payload. Round-trips bit-exactly.

inline constexpr uint16_t kWireFormatVersion = 1;

std::vector<uint8_t> serialize_params(const ModelParams& params);
ModelParams deserialize_params(const uint8_t* bytes, size_t size);
ModelParams deserialize_params(const std::vector<uint8_t>& bytes);
void save_params(const std::string& path, const ModelParams& params);
ModelParams load_params(const std::string& path);

}  // namespace kd3a
