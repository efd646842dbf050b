#include "kd3a/kernels.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

namespace kd3a {

bool Matrix::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace kd3a

namespace kd3a::kernels {

namespace {

std::atomic<bool> g_parallel{true};

void check_shapes_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  if (out.rows != a.rows || out.cols != b.rows) out = Matrix(a.rows, b.rows);
}

void check_shapes_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: inner dimension mismatch");
  if (out.rows != a.cols || out.cols != b.cols) out = Matrix(a.cols, b.cols);
}

void check_shapes_nn(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul_nn: inner dimension mismatch");
  if (out.rows != a.rows || out.cols != b.cols) out = Matrix(a.rows, b.cols);
}

inline void softmax_row(const double* in, double* out, int c) {
  double hi = in[0];
  for (int j = 1; j < c; ++j) hi = std::max(hi, in[j]);
  double sum = 0.0;
  for (int j = 0; j < c; ++j) {
    out[j] = std::exp(in[j] - hi);
    sum += out[j];
  }
  double inv = 1.0 / sum;
  for (int j = 0; j < c; ++j) out[j] *= inv;
}

inline void moments_column(const Matrix& x, int j, double& mean, double& var) {
  double s = 0.0;
  for (int i = 0; i < x.rows; ++i) s += x(i, j);
  mean = s / x.rows;
  double sq = 0.0;
  for (int i = 0; i < x.rows; ++i) {
    double d = x(i, j) - mean;
    sq += d * d;
  }
  var = sq / x.rows;
}

constexpr size_t kParGrain = 4096;  // skip thread fan-out below this output size

}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel_enabled(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

namespace serial {

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  check_shapes_nt(a, b, out);
  for (int i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    double* orow = out.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* br = b.row(j);
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += ar[k] * br[k];
      orow[j] = acc;
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  check_shapes_tn(a, b, out);
  for (int i = 0; i < a.cols; ++i) {
    double* orow = out.row(i);
    for (int j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.rows; ++k) acc += a(k, i) * b(k, j);
      orow[j] = acc;
    }
  }
}

void matmul_nn(const Matrix& a, const Matrix& b, Matrix& out) {
  check_shapes_nn(a, b, out);
  for (int i = 0; i < a.rows; ++i) {
    double* orow = out.row(i);
    for (int j = 0; j < b.cols; ++j) orow[j] = 0.0;
    for (int k = 0; k < a.cols; ++k) {
      double av = a(i, k);
      const double* br = b.row(k);
      for (int j = 0; j < b.cols; ++j) orow[j] += av * br[j];
    }
  }
}

void row_softmax(const Matrix& logits, Matrix& out) {
  if (logits.cols < 1) throw std::invalid_argument("row_softmax: empty rows");
  if (!out.same_shape(logits)) out = Matrix(logits.rows, logits.cols);
  for (int i = 0; i < logits.rows; ++i) softmax_row(logits.row(i), out.row(i), logits.cols);
}

void relu(const Matrix& x, Matrix& out) {
  if (!out.same_shape(x)) out = Matrix(x.rows, x.cols);
  for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
}

void column_moments(const Matrix& x, std::vector<double>& mean, std::vector<double>& var) {
  if (x.rows < 1) throw std::invalid_argument("column_moments: empty matrix");
  mean.assign(x.cols, 0.0);
  var.assign(x.cols, 0.0);
  for (int j = 0; j < x.cols; ++j) moments_column(x, j, mean[j], var[j]);
}

void column_sums(const Matrix& x, std::vector<double>& sums) {
  sums.assign(x.cols, 0.0);
  for (int j = 0; j < x.cols; ++j) {
    double s = 0.0;
    for (int i = 0; i < x.rows; ++i) s += x(i, j);
    sums[j] = s;
  }
}

}  // namespace serial

namespace par {

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  check_shapes_nt(a, b, out);
#pragma omp parallel for schedule(static) if (out.size() >= kParGrain)
  for (int i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    double* orow = out.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* br = b.row(j);
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += ar[k] * br[k];
      orow[j] = acc;
    }
  }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  check_shapes_tn(a, b, out);
#pragma omp parallel for schedule(static) if (out.size() >= kParGrain)
  for (int i = 0; i < a.cols; ++i) {
    double* orow = out.row(i);
    for (int j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.rows; ++k) acc += a(k, i) * b(k, j);
      orow[j] = acc;
    }
  }
}

void matmul_nn(const Matrix& a, const Matrix& b, Matrix& out) {
  check_shapes_nn(a, b, out);
#pragma omp parallel for schedule(static) if (out.size() >= kParGrain)
  for (int i = 0; i < a.rows; ++i) {
    double* orow = out.row(i);
    for (int j = 0; j < b.cols; ++j) orow[j] = 0.0;
    for (int k = 0; k < a.cols; ++k) {
      double av = a(i, k);
      const double* br = b.row(k);
      for (int j = 0; j < b.cols; ++j) orow[j] += av * br[j];
    }
  }
}

void row_softmax(const Matrix& logits, Matrix& out) {
  if (logits.cols < 1) throw std::invalid_argument("row_softmax: empty rows");
  if (!out.same_shape(logits)) out = Matrix(logits.rows, logits.cols);
#pragma omp parallel for schedule(static) if (out.size() >= kParGrain)
  for (int i = 0; i < logits.rows; ++i) softmax_row(logits.row(i), out.row(i), logits.cols);
}

void relu(const Matrix& x, Matrix& out) {
  if (!out.same_shape(x)) out = Matrix(x.rows, x.cols);
  const long long n = static_cast<long long>(x.data.size());
#pragma omp parallel for schedule(static) if (x.data.size() >= kParGrain)
  for (long long i = 0; i < n; ++i) out.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
}

void column_moments(const Matrix& x, std::vector<double>& mean, std::vector<double>& var) {
  if (x.rows < 1) throw std::invalid_argument("column_moments: empty matrix");
  mean.assign(x.cols, 0.0);
  var.assign(x.cols, 0.0);
#pragma omp parallel for schedule(static) if (x.size() >= kParGrain)
  for (int j = 0; j < x.cols; ++j) moments_column(x, j, mean[j], var[j]);
}

void column_sums(const Matrix& x, std::vector<double>& sums) {
  sums.assign(x.cols, 0.0);
#pragma omp parallel for schedule(static) if (x.size() >= kParGrain)
  for (int j = 0; j < x.cols; ++j) {
    double s = 0.0;
    for (int i = 0; i < x.rows; ++i) s += x(i, j);
    sums[j] = s;
  }
}

}  // namespace par

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  parallel_enabled() ? par::matmul_nt(a, b, out) : serial::matmul_nt(a, b, out);
}
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  parallel_enabled() ? par::matmul_tn(a, b, out) : serial::matmul_tn(a, b, out);
}
void matmul_nn(const Matrix& a, const Matrix& b, Matrix& out) {
  parallel_enabled() ? par::matmul_nn(a, b, out) : serial::matmul_nn(a, b, out);
}
void row_softmax(const Matrix& logits, Matrix& out) {
  parallel_enabled() ? par::row_softmax(logits, out) : serial::row_softmax(logits, out);
}
void relu(const Matrix& x, Matrix& out) {
  parallel_enabled() ? par::relu(x, out) : serial::relu(x, out);
}
void column_moments(const Matrix& x, std::vector<double>& mean, std::vector<double>& var) {
  parallel_enabled() ? par::column_moments(x, mean, var) : serial::column_moments(x, mean, var);
}
void column_sums(const Matrix& x, std::vector<double>& sums) {
  parallel_enabled() ? par::column_sums(x, sums) : serial::column_sums(x, sums);
}

}  // namespace kd3a::kernels
