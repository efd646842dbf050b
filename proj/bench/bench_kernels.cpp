// Serial vs. multithreaded kernel comparison. Each kernel pair must produce
// bit-identical output (the parallel variants keep the serial accumulation
// order per output element); the run aborts if any checksum disagrees.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "kd3a/kernels.hpp"
#include "kd3a/knowledge_vote.hpp"
#include "kd3a/matrix.hpp"
#include "kd3a/rng.hpp"

namespace {

using kd3a::Matrix;

Matrix random_matrix(int rows, int cols, kd3a::Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.normal();
  return m;
}

Matrix random_probs(int rows, int cols, kd3a::Rng& rng) {
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (int c = 0; c < cols; ++c) {
      m(r, c) = rng.uniform() + 1e-3;
      sum += m(r, c);
    }
    for (int c = 0; c < cols; ++c) m(r, c) /= sum;
  }
  return m;
}

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

bool bytes_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

int failures = 0;

void report(const std::string& name, double serial_ms, double par_ms, bool identical) {
  std::printf("%-22s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx   %s\n", name.c_str(),
              serial_ms, par_ms, serial_ms / par_ms, identical ? "bit-identical" : "MISMATCH");
  if (!identical) ++failures;
}

void bench_pair(const std::string& name, int reps,
                const std::function<void(Matrix&)>& serial_fn,
                const std::function<void(Matrix&)>& par_fn) {
  Matrix out_serial, out_par;
  const double s = time_ms([&] { serial_fn(out_serial); }, reps);
  const double p = time_ms([&] { par_fn(out_par); }, reps);
  report(name, s, p, out_serial.rows == out_par.rows && out_serial.cols == out_par.cols &&
                         bytes_equal(out_serial.data, out_par.data));
}

}  // namespace

int main() {
  kd3a::Rng rng(42);
  namespace ker = kd3a::kernels;

  const int B = 512, D = 256, H = 256;
  const Matrix a = random_matrix(B, D, rng);
  const Matrix w = random_matrix(H, D, rng);   // for a * w^T
  const Matrix g = random_matrix(B, H, rng);   // gradient-shaped operand
  const Matrix nn_rhs = random_matrix(D, H, rng);

  bench_pair("matmul_nt 512x256x256", 20, [&](Matrix& o) { ker::serial::matmul_nt(a, w, o); },
             [&](Matrix& o) { ker::par::matmul_nt(a, w, o); });
  bench_pair("matmul_tn 512x256x256", 20, [&](Matrix& o) { ker::serial::matmul_tn(g, a, o); },
             [&](Matrix& o) { ker::par::matmul_tn(g, a, o); });
  bench_pair("matmul_nn 512x256x256", 20, [&](Matrix& o) { ker::serial::matmul_nn(a, nn_rhs, o); },
             [&](Matrix& o) { ker::par::matmul_nn(a, nn_rhs, o); });

  const Matrix logits = random_matrix(4096, 64, rng);
  bench_pair("row_softmax 4096x64", 50, [&](Matrix& o) { ker::serial::row_softmax(logits, o); },
             [&](Matrix& o) { ker::par::row_softmax(logits, o); });
  bench_pair("relu 4096x64", 50, [&](Matrix& o) { ker::serial::relu(logits, o); },
             [&](Matrix& o) { ker::par::relu(logits, o); });

  {
    const Matrix x = random_matrix(8192, 128, rng);
    std::vector<double> m1, v1, m2, v2;
    const double s = time_ms([&] { ker::serial::column_moments(x, m1, v1); }, 50);
    const double p = time_ms([&] { ker::par::column_moments(x, m2, v2); }, 50);
    report("column_moments 8192", s, p, bytes_equal(m1, m2) && bytes_equal(v1, v2));
  }

  {
    // Consensus-vote construction over a 4096-sample target with 4 teachers.
    const int n = 4096, K = 4, C = 8;
    std::vector<Matrix> probs;
    for (int k = 0; k < K; ++k) probs.push_back(random_probs(n, C, rng));
    kd3a::UnlabeledDataset target =
        kd3a::as_target({random_matrix(n, 4, rng), std::vector<int>(n, 0), C});

    kd3a::ExtendedDomain dom_serial, dom_par;
    ker::set_parallel_enabled(false);
    const double s =
        time_ms([&] { dom_serial = kd3a::build_extended_domain(target, probs, 0.5); }, 10);
    ker::set_parallel_enabled(true);
    const double p =
        time_ms([&] { dom_par = kd3a::build_extended_domain(target, probs, 0.5); }, 10);

    bool same = dom_serial.items.size() == dom_par.items.size();
    for (size_t i = 0; same && i < dom_serial.items.size(); ++i)
      same = dom_serial.items[i].n_p == dom_par.items[i].n_p &&
             dom_serial.items[i].consensus_class == dom_par.items[i].consensus_class &&
             bytes_equal(dom_serial.items[i].p, dom_par.items[i].p);
    report("knowledge_vote 4096x4", s, p, same);
  }

  if (failures > 0) {
    std::printf("%d kernel(s) diverged from the serial reference\n", failures);
    return 1;
  }
  std::printf("all parallel kernels match the serial reference bit for bit\n");
  return 0;
}
