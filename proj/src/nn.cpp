#include "kd3a/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "kd3a/kernels.hpp"

namespace kd3a {

namespace {

constexpr int kWeight = 0, kBias = 1;
constexpr int kGamma = 0, kBeta = 1, kRunMean = 2, kRunVar = 3;

Matrix to_matrix(const Tensor& t) {
  Matrix m(static_cast<int>(t.shape.rows), static_cast<int>(t.shape.cols));
  for (size_t i = 0; i < t.data.size(); ++i) m.data[i] = static_cast<double>(t.data[i]);
  return m;
}

Tensor make_tensor(uint32_t rows, uint32_t cols, float fill = 0.0f) {
  Tensor t;
  t.shape = {rows, cols};
  t.data.assign(t.shape.count(), fill);
  return t;
}

void check_simplex(std::span<const double> v, const char* what) {
  double sum = 0.0;
  for (double x : v) sum += x;
  if (std::abs(sum - 1.0) > 1e-4)
    throw std::invalid_argument(std::string(what) + ": distribution does not sum to 1");
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelParams / ParamGrads

bool ModelParams::same_manifest(const ModelParams& other) const {
  if (blocks.size() != other.blocks.size()) return false;
  for (size_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b].kind != other.blocks[b].kind) return false;
    if (blocks[b].tensors.size() != other.blocks[b].tensors.size()) return false;
    for (size_t t = 0; t < blocks[b].tensors.size(); ++t)
      if (!(blocks[b].tensors[t].shape == other.blocks[b].tensors[t].shape)) return false;
  }
  return true;
}

size_t ModelParams::scalar_count() const {
  size_t n = 0;
  for (const auto& b : blocks)
    for (const auto& t : b.tensors) n += t.data.size();
  return n;
}

std::string ModelParams::manifest_string() const {
  std::ostringstream os;
  for (const auto& b : blocks) {
    os << (b.kind == BlockKind::linear ? "linear(" : "batchnorm(");
    for (size_t t = 0; t < b.tensors.size(); ++t)
      os << (t ? "," : "") << b.tensors[t].shape.rows << "x" << b.tensors[t].shape.cols;
    os << ") ";
  }
  return os.str();
}

ParamGrads ParamGrads::zeros_like(const ModelParams& params) {
  ParamGrads g;
  g.blocks.resize(params.blocks.size());
  for (size_t b = 0; b < params.blocks.size(); ++b) {
    g.blocks[b].resize(params.blocks[b].tensors.size());
    for (size_t t = 0; t < params.blocks[b].tensors.size(); ++t)
      g.blocks[b][t].assign(params.blocks[b].tensors[t].data.size(), 0.0);
  }
  return g;
}

void ParamGrads::add_scaled(const ParamGrads& other, double scale) {
  if (blocks.size() != other.blocks.size()) throw std::invalid_argument("grads: block mismatch");
  for (size_t b = 0; b < blocks.size(); ++b)
    for (size_t t = 0; t < blocks[b].size(); ++t) {
      if (blocks[b][t].size() != other.blocks[b][t].size())
        throw std::invalid_argument("grads: tensor mismatch");
      for (size_t i = 0; i < blocks[b][t].size(); ++i)
        blocks[b][t][i] += scale * other.blocks[b][t][i];
    }
}

double ParamGrads::max_abs() const {
  double m = 0.0;
  for (const auto& b : blocks)
    for (const auto& t : b)
      for (double v : t) m = std::max(m, std::abs(v));
  return m;
}

// ---------------------------------------------------------------------------
// Init

Classifier Classifier::init(const Architecture& arch, uint64_t seed) {
  if (arch.input_dim < 1 || arch.num_classes < 2)
    throw std::invalid_argument("init: need input_dim >= 1 and num_classes >= 2");
  for (int h : arch.hidden)
    if (h < 1) throw std::invalid_argument("init: hidden width must be positive");

  Classifier model;
  model.arch = arch;
  Rng rng(seed);

  int fan_in = arch.input_dim;
  for (int h : arch.hidden) {
    ParamBlock lin;
    lin.kind = BlockKind::linear;
    lin.tensors.push_back(make_tensor(static_cast<uint32_t>(h), static_cast<uint32_t>(fan_in)));
    lin.tensors.push_back(make_tensor(static_cast<uint32_t>(h), 1));
    const double scale = std::sqrt(2.0 / fan_in);
    for (auto& w : lin.tensors[kWeight].data) w = static_cast<float>(rng.normal() * scale);
    model.params.blocks.push_back(std::move(lin));

    ParamBlock bn;
    bn.kind = BlockKind::batchnorm;
    bn.tensors.push_back(make_tensor(static_cast<uint32_t>(h), 1, 1.0f));  // gamma
    bn.tensors.push_back(make_tensor(static_cast<uint32_t>(h), 1, 0.0f));  // beta
    bn.tensors.push_back(make_tensor(static_cast<uint32_t>(h), 1, 0.0f));  // running mean
    bn.tensors.push_back(make_tensor(static_cast<uint32_t>(h), 1, 1.0f));  // running var
    model.params.blocks.push_back(std::move(bn));
    fan_in = h;
  }

  ParamBlock head;
  head.kind = BlockKind::linear;
  head.tensors.push_back(
      make_tensor(static_cast<uint32_t>(arch.num_classes), static_cast<uint32_t>(fan_in)));
  head.tensors.push_back(make_tensor(static_cast<uint32_t>(arch.num_classes), 1));
  const double scale = std::sqrt(2.0 / fan_in);
  for (auto& w : head.tensors[kWeight].data) w = static_cast<float>(rng.normal() * scale);
  model.params.blocks.push_back(std::move(head));
  return model;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

// Computes the whole trace without touching the model. Train mode uses batch
// statistics (recorded in the trace so the caller can fold them into the
// running estimates); eval mode reads the stored running statistics.
ForwardTrace trace_core(const Classifier& model, const Matrix& batch, ForwardMode mode) {
  const auto& arch = model.arch;
  if (batch.cols != arch.input_dim) throw std::invalid_argument("forward: input dim mismatch");
  if (batch.rows < 1) throw std::invalid_argument("forward: empty batch");
  if (mode == ForwardMode::train && batch.rows < 2)
    throw std::invalid_argument("forward: train mode needs batch size >= 2");

  const int L = arch.bn_layer_count();
  ForwardTrace tr;
  tr.mode = mode;
  tr.input = batch;
  tr.pre_bn.resize(L);
  tr.xhat.resize(L);
  tr.post_act.resize(L);
  tr.bn_mean.resize(L);
  tr.bn_var.resize(L);

  const Matrix* h = &tr.input;
  Matrix z;
  for (int l = 0; l < L; ++l) {
    const auto& lin = model.params.blocks[2 * l];
    const auto& bn = model.params.blocks[2 * l + 1];
    Matrix w = to_matrix(lin.tensors[kWeight]);
    kernels::matmul_nt(*h, w, z);
    const auto& bias = lin.tensors[kBias].data;
    for (int r = 0; r < z.rows; ++r) {
      double* zr = z.row(r);
      for (int c = 0; c < z.cols; ++c) zr[c] += static_cast<double>(bias[c]);
    }
    tr.pre_bn[l] = z;

    if (mode == ForwardMode::train) {
      kernels::column_moments(z, tr.bn_mean[l], tr.bn_var[l]);
    } else {
      const auto& rm = bn.tensors[kRunMean].data;
      const auto& rv = bn.tensors[kRunVar].data;
      tr.bn_mean[l].assign(rm.begin(), rm.end());
      tr.bn_var[l].assign(rv.begin(), rv.end());
    }

    Matrix& xh = tr.xhat[l];
    xh = Matrix(z.rows, z.cols);
    std::vector<double> inv_std(z.cols);
    for (int c = 0; c < z.cols; ++c) inv_std[c] = 1.0 / std::sqrt(tr.bn_var[l][c] + kBnEpsilon);
    const auto& gamma = bn.tensors[kGamma].data;
    const auto& beta = bn.tensors[kBeta].data;
    Matrix y(z.rows, z.cols);
    for (int r = 0; r < z.rows; ++r) {
      const double* zr = z.row(r);
      double* xr = xh.row(r);
      double* yr = y.row(r);
      for (int c = 0; c < z.cols; ++c) {
        xr[c] = (zr[c] - tr.bn_mean[l][c]) * inv_std[c];
        yr[c] = static_cast<double>(gamma[c]) * xr[c] + static_cast<double>(beta[c]);
      }
    }
    kernels::relu(y, tr.post_act[l]);
    h = &tr.post_act[l];
  }

  const auto& head = model.params.blocks[2 * L];
  Matrix w = to_matrix(head.tensors[kWeight]);
  kernels::matmul_nt(*h, w, tr.logits);
  const auto& bias = head.tensors[kBias].data;
  for (int r = 0; r < tr.logits.rows; ++r) {
    double* lr = tr.logits.row(r);
    for (int c = 0; c < tr.logits.cols; ++c) lr[c] += static_cast<double>(bias[c]);
  }
  kernels::row_softmax(tr.logits, tr.probs);
  return tr;
}

void update_running_stats(Classifier& model, const ForwardTrace& tr) {
  const int L = model.arch.bn_layer_count();
  for (int l = 0; l < L; ++l) {
    auto& bn = model.params.blocks[2 * l + 1];
    auto& rm = bn.tensors[kRunMean].data;
    auto& rv = bn.tensors[kRunVar].data;
    for (size_t c = 0; c < rm.size(); ++c) {
      rm[c] = static_cast<float>((1.0 - kBnMomentum) * static_cast<double>(rm[c]) +
                                 kBnMomentum * tr.bn_mean[l][c]);
      rv[c] = static_cast<float>((1.0 - kBnMomentum) * static_cast<double>(rv[c]) +
                                 kBnMomentum * tr.bn_var[l][c]);
    }
  }
}

ForwardResult result_from(ForwardTrace&& tr) {
  ForwardResult out;
  out.probs = std::move(tr.probs);
  out.bn_features = std::move(tr.pre_bn);
  return out;
}

}  // namespace

ForwardTrace forward_trace(Classifier& model, const Matrix& batch, ForwardMode mode,
                           bool update_running) {
  ForwardTrace tr = trace_core(model, batch, mode);
  if (mode == ForwardMode::train && update_running) update_running_stats(model, tr);
  return tr;
}

ForwardResult forward(Classifier& model, const Matrix& batch, ForwardMode mode) {
  return result_from(forward_trace(model, batch, mode));
}

ForwardResult infer(const Classifier& model, const Matrix& batch) {
  return result_from(trace_core(model, batch, ForwardMode::eval));
}

Matrix predict_probs(const Classifier& model, const Matrix& inputs) {
  return trace_core(model, inputs, ForwardMode::eval).probs;
}

int argmax_row(const double* row, int n) {
  int best = 0;
  for (int c = 1; c < n; ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

std::vector<int> predict_classes(const Classifier& model, const Matrix& inputs) {
  Matrix probs = predict_probs(model, inputs);
  std::vector<int> out(probs.rows);
  for (int r = 0; r < probs.rows; ++r) out[r] = argmax_row(probs.row(r), probs.cols);
  return out;
}

// ---------------------------------------------------------------------------
// Backward

ParamGrads backward(const Classifier& model, const ForwardTrace& trace, const Matrix& dlogits,
                    const std::vector<Matrix>* bn_feature_grads) {
  const int L = model.arch.bn_layer_count();
  if (!dlogits.same_shape(trace.logits)) throw std::invalid_argument("backward: dlogits shape");
  if (bn_feature_grads && static_cast<int>(bn_feature_grads->size()) != L)
    throw std::invalid_argument("backward: feature grad count");

  ParamGrads grads = ParamGrads::zeros_like(model.params);
  const int B = trace.input.rows;

  // Softmax head.
  const auto& head = model.params.blocks[2 * L];
  const Matrix& h_last = L > 0 ? trace.post_act[L - 1] : trace.input;
  Matrix dw, dh;
  kernels::matmul_tn(dlogits, h_last, dw);  // (C x B)^T is implicit: dlogits^T * h
  std::vector<double> db;
  kernels::column_sums(dlogits, db);
  std::copy(dw.data.begin(), dw.data.end(), grads.blocks[2 * L][kWeight].begin());
  std::copy(db.begin(), db.end(), grads.blocks[2 * L][kBias].begin());
  Matrix w_head = to_matrix(head.tensors[kWeight]);
  kernels::matmul_nn(dlogits, w_head, dh);

  for (int l = L - 1; l >= 0; --l) {
    const auto& bn = model.params.blocks[2 * l + 1];
    const auto& gamma = bn.tensors[kGamma].data;
    const int C = trace.pre_bn[l].cols;

    // ReLU gate: activation output was max(0, y).
    Matrix dy = dh;
    for (int r = 0; r < dy.rows; ++r) {
      double* dr = dy.row(r);
      const double* ar = trace.post_act[l].row(r);
      for (int c = 0; c < C; ++c)
        if (ar[c] <= 0.0) dr[c] = 0.0;
    }

    // Batchnorm backward.
    auto& dgamma = grads.blocks[2 * l + 1][kGamma];
    auto& dbeta = grads.blocks[2 * l + 1][kBeta];
    Matrix dxhat(dy.rows, C);
    for (int r = 0; r < dy.rows; ++r) {
      const double* dr = dy.row(r);
      const double* xr = trace.xhat[l].row(r);
      double* dxr = dxhat.row(r);
      for (int c = 0; c < C; ++c) {
        dgamma[c] += dr[c] * xr[c];
        dbeta[c] += dr[c];
        dxr[c] = dr[c] * static_cast<double>(gamma[c]);
      }
    }

    std::vector<double> inv_std(C);
    for (int c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(trace.bn_var[l][c] + kBnEpsilon);

    Matrix dz(dy.rows, C);
    if (trace.mode == ForwardMode::train) {
      // Batch statistics depend on every row of the input feature.
      std::vector<double> sum_dxhat, sum_dxhat_xhat(C, 0.0);
      kernels::column_sums(dxhat, sum_dxhat);
      for (int r = 0; r < dy.rows; ++r) {
        const double* dxr = dxhat.row(r);
        const double* xr = trace.xhat[l].row(r);
        for (int c = 0; c < C; ++c) sum_dxhat_xhat[c] += dxr[c] * xr[c];
      }
      const double invB = 1.0 / B;
      for (int r = 0; r < dy.rows; ++r) {
        const double* dxr = dxhat.row(r);
        const double* xr = trace.xhat[l].row(r);
        double* dzr = dz.row(r);
        for (int c = 0; c < C; ++c)
          dzr[c] = inv_std[c] * invB * (B * dxr[c] - sum_dxhat[c] - xr[c] * sum_dxhat_xhat[c]);
      }
    } else {
      for (int r = 0; r < dy.rows; ++r) {
        const double* dxr = dxhat.row(r);
        double* dzr = dz.row(r);
        for (int c = 0; c < C; ++c) dzr[c] = dxr[c] * inv_std[c];
      }
    }

    if (bn_feature_grads) {
      const Matrix& extra = (*bn_feature_grads)[l];
      if (extra.rows > 0) {
        if (!extra.same_shape(dz)) throw std::invalid_argument("backward: feature grad shape");
        for (size_t i = 0; i < dz.data.size(); ++i) dz.data[i] += extra.data[i];
      }
    }

    const Matrix& h_prev = l > 0 ? trace.post_act[l - 1] : trace.input;
    kernels::matmul_tn(dz, h_prev, dw);
    kernels::column_sums(dz, db);
    std::copy(dw.data.begin(), dw.data.end(), grads.blocks[2 * l][kWeight].begin());
    std::copy(db.begin(), db.end(), grads.blocks[2 * l][kBias].begin());

    if (l > 0) {
      Matrix w = to_matrix(model.params.blocks[2 * l].tensors[kWeight]);
      kernels::matmul_nn(dz, w, dh);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Losses

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw std::invalid_argument("kl: size mismatch");
  check_simplex(p, "kl: p");
  check_simplex(q, "kl: q");
  double kl = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;  // lim_{p->0} p log p = 0
    kl += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kEpsilonKl)));
  }
  return kl;
}

double weighted_kd_loss(double support, std::span<const double> p, std::span<const double> q) {
  if (support < 0.0) throw std::invalid_argument("kd loss: negative support weight");
  return support * kl_divergence(p, q);
}

double cross_entropy_loss(const Matrix& probs, const std::vector<int>& labels) {
  if (probs.rows != static_cast<int>(labels.size()) || probs.rows == 0)
    throw std::invalid_argument("cross entropy: row/label mismatch");
  double total = 0.0;
  for (int r = 0; r < probs.rows; ++r) {
    if (labels[r] < 0 || labels[r] >= probs.cols)
      throw std::invalid_argument("cross entropy: label out of range");
    total -= std::log(std::max(probs(r, labels[r]), kEpsilonKl));
  }
  return total / probs.rows;
}

Matrix ce_grad_logits(const Matrix& probs, const std::vector<int>& labels) {
  if (probs.rows != static_cast<int>(labels.size()) || probs.rows == 0)
    throw std::invalid_argument("cross entropy grad: row/label mismatch");
  Matrix d = probs;
  const double invB = 1.0 / probs.rows;
  for (int r = 0; r < d.rows; ++r) {
    if (labels[r] < 0 || labels[r] >= probs.cols)
      throw std::invalid_argument("cross entropy grad: label out of range");
    d(r, labels[r]) -= 1.0;
    double* dr = d.row(r);
    for (int c = 0; c < d.cols; ++c) dr[c] *= invB;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Optimization

void sgd_step(ModelParams& params, ParamGrads& velocity, const ParamGrads& grads, double lr,
              double momentum) {
  if (params.blocks.size() != grads.blocks.size() ||
      params.blocks.size() != velocity.blocks.size())
    throw std::invalid_argument("sgd: block count mismatch");
  for (size_t b = 0; b < params.blocks.size(); ++b) {
    // Running statistics are carried by the forward pass, not the optimizer.
    const bool is_bn = params.blocks[b].kind == BlockKind::batchnorm;
    for (size_t t = 0; t < params.blocks[b].tensors.size(); ++t) {
      if (is_bn && (t == kRunMean || t == kRunVar)) continue;
      auto& p = params.blocks[b].tensors[t].data;
      auto& v = velocity.blocks[b][t];
      const auto& g = grads.blocks[b][t];
      if (p.size() != v.size() || p.size() != g.size())
        throw std::invalid_argument("sgd: tensor size mismatch");
      for (size_t i = 0; i < p.size(); ++i) {
        v[i] = momentum * v[i] + g[i];
        p[i] = static_cast<float>(static_cast<double>(p[i]) - lr * v[i]);
      }
    }
  }
}

double cosine_lr(double epoch, double total_epochs, double lr_hi, double lr_lo) {
  if (total_epochs <= 0.0) throw std::invalid_argument("cosine_lr: total_epochs must be > 0");
  const double t = std::clamp(epoch / total_epochs, 0.0, 1.0);
  return lr_lo + (lr_hi - lr_lo) * 0.5 * (1.0 + std::cos(t * 3.14159265358979323846));
}

// ---------------------------------------------------------------------------
// Aggregation & evaluation

ModelParams aggregate_params(const std::vector<const ModelParams*>& models,
                             const DomainWeights& weights) {
  weights.validate();
  if (models.empty() || models.size() != weights.alpha.size())
    throw std::invalid_argument("aggregate: model/weight count mismatch");
  for (const auto* m : models)
    if (!m || !m->same_manifest(*models[0]))
      throw std::invalid_argument("aggregate: manifest mismatch");

  ModelParams out = *models[0];
  for (size_t b = 0; b < out.blocks.size(); ++b)
    for (size_t t = 0; t < out.blocks[b].tensors.size(); ++t) {
      auto& dst = out.blocks[b].tensors[t].data;
      for (size_t i = 0; i < dst.size(); ++i) {
        double acc = 0.0;
        for (size_t k = 0; k < models.size(); ++k)
          acc += weights.alpha[k] *
                 static_cast<double>(models[k]->blocks[b].tensors[t].data[i]);
        dst[i] = static_cast<float>(acc);
      }
    }
  return out;
}

ModelParams aggregate_params(const std::vector<ModelParams>& models, const DomainWeights& weights) {
  std::vector<const ModelParams*> ptrs;
  ptrs.reserve(models.size());
  for (const auto& m : models) ptrs.push_back(&m);
  return aggregate_params(ptrs, weights);
}

ModelParams blend_params(const ModelParams& a, const ModelParams& b, double weight_a) {
  DomainWeights w;
  w.alpha = {weight_a, 1.0 - weight_a};
  return aggregate_params(std::vector<const ModelParams*>{&a, &b}, w);
}

double empirical_task_risk(const Classifier& model, const LabeledDataset& dataset) {
  if (dataset.inputs.rows == 0) throw std::invalid_argument("task risk: empty dataset");
  if (dataset.inputs.rows != static_cast<int>(dataset.labels.size()))
    throw std::invalid_argument("task risk: label count mismatch");
  std::vector<int> pred = predict_classes(model, dataset.inputs);
  int wrong = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] != dataset.labels[i]) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// Wire format

namespace {

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

struct ByteReader {
  const uint8_t* p;
  size_t left;
  void need(size_t n, const char* what) {
    if (left < n) throw std::runtime_error(std::string("deserialize: truncated ") + what);
  }
  uint8_t u8(const char* what) {
    need(1, what);
    --left;
    return *p++;
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint16_t>(p[0] | (p[1] << 8));
    p += 2;
    left -= 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    p += 4;
    left -= 4;
    return v;
  }
};

constexpr char kMagic[4] = {'K', 'D', '3', 'A'};

}  // namespace

std::vector<uint8_t> serialize_params(const ModelParams& params) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kWireFormatVersion);
  put_u32(out, static_cast<uint32_t>(params.blocks.size()));
  for (const auto& b : params.blocks) {
    out.push_back(static_cast<uint8_t>(b.kind));
    if (b.tensors.size() > 255) throw std::invalid_argument("serialize: too many tensors");
    out.push_back(static_cast<uint8_t>(b.tensors.size()));
    for (const auto& t : b.tensors) {
      put_u32(out, t.shape.rows);
      put_u32(out, t.shape.cols);
    }
  }
  for (const auto& b : params.blocks)
    for (const auto& t : b.tensors) {
      if (t.data.size() != t.shape.count())
        throw std::invalid_argument("serialize: tensor size disagrees with shape");
      for (float f : t.data) put_u32(out, std::bit_cast<uint32_t>(f));
    }
  return out;
}

ModelParams deserialize_params(const uint8_t* bytes, size_t size) {
  ByteReader rd{bytes, size};
  rd.need(4, "magic");
  if (std::memcmp(rd.p, kMagic, 4) != 0) throw std::runtime_error("deserialize: bad magic");
  rd.p += 4;
  rd.left -= 4;
  const uint16_t version = rd.u16("version");
  if (version != kWireFormatVersion) throw std::runtime_error("deserialize: unsupported version");

  ModelParams params;
  const uint32_t nblocks = rd.u32("block count");
  params.blocks.resize(nblocks);
  for (auto& b : params.blocks) {
    const uint8_t kind = rd.u8("block kind");
    if (kind > 1) throw std::runtime_error("deserialize: unknown block kind");
    b.kind = static_cast<BlockKind>(kind);
    const uint8_t ntensors = rd.u8("tensor count");
    b.tensors.resize(ntensors);
    for (auto& t : b.tensors) {
      t.shape.rows = rd.u32("tensor rows");
      t.shape.cols = rd.u32("tensor cols");
    }
  }
  for (auto& b : params.blocks)
    for (auto& t : b.tensors) {
      t.data.resize(t.shape.count());
      for (auto& f : t.data) f = std::bit_cast<float>(rd.u32("tensor data"));
    }
  if (rd.left != 0) throw std::runtime_error("deserialize: trailing bytes");
  return params;
}

ModelParams deserialize_params(const std::vector<uint8_t>& bytes) {
  return deserialize_params(bytes.data(), bytes.size());
}

void save_params(const std::string& path, const ModelParams& params) {
  const std::vector<uint8_t> bytes = serialize_params(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_params: cannot open " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("save_params: write failed for " + path);
}

ModelParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_params: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return deserialize_params(bytes);
}

}  // namespace kd3a
