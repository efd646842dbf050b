#pragma once

#include <vector>

#include "kd3a/matrix.hpp"

namespace kd3a::kernels {

// Every kernel has a serial reference implementation and an OpenMP variant.
// The parallel variants partition work by output row, so each element is
// written by exactly one thread with the same accumulation order as the
// serial code: results are bit-identical regardless of thread count.

bool parallel_enabled();
void set_parallel_enabled(bool on);

namespace serial {

// out = a * b^T        (a: m x k, b: n x k, out: m x n)
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out);
// out = a^T * b        (a: k x m, b: k x n, out: m x n)
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out);
// out = a * b          (a: m x k, b: k x n, out: m x n)
void matmul_nn(const Matrix& a, const Matrix& b, Matrix& out);
// out[r] = softmax(in[r]) for every row
void row_softmax(const Matrix& logits, Matrix& out);
void relu(const Matrix& x, Matrix& out);
// Per-column mean and biased variance.
void column_moments(const Matrix& x, std::vector<double>& mean, std::vector<double>& var);
void column_sums(const Matrix& x, std::vector<double>& sums);

}  // namespace serial

namespace par {

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_nn(const Matrix& a, const Matrix& b, Matrix& out);
void row_softmax(const Matrix& logits, Matrix& out);
void relu(const Matrix& x, Matrix& out);
void column_moments(const Matrix& x, std::vector<double>& mean, std::vector<double>& var);
void column_sums(const Matrix& x, std::vector<double>& sums);

}  // namespace par

// Dispatching wrappers honoring the runtime switch.
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_nn(const Matrix& a, const Matrix& b, Matrix& out);
void row_softmax(const Matrix& logits, Matrix& out);
void relu(const Matrix& x, Matrix& out);
void column_moments(const Matrix& x, std::vector<double>& mean, std::vector<double>& var);
void column_sums(const Matrix& x, std::vector<double>& sums);

}  // namespace kd3a::kernels
