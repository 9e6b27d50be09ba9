#include "syp/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstring>

namespace syp::kernels {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double gelu_one(double x) { return x * 0.5 * (1.0 + std::erf(x * kInvSqrt2)); }

inline double gelu_grad_one(double x) {
  double phi_cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  double phi_pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return phi_cdf + x * phi_pdf;
}

// Strictly inside (0,1) for every finite input; the extreme tails clamp to
// the nearest representable interior value.
inline double sigmoid_one(double x) {
  double y;
  if (x >= 0.0) {
    y = 1.0 / (1.0 + std::exp(-x));
  } else {
    double e = std::exp(x);
    y = e / (1.0 + e);
  }
  if (y >= 1.0) y = 0x1.fffffffffffffp-1;
  if (y <= 0.0) y = 5e-324;
  return y;
}

std::atomic<bool> g_parallel{true};
std::atomic<size_t> g_threshold{16384};

inline void matmul_rows(const double* a, const double* b, double* c, int m, int k, int n,
                        int i0, int i1) {
  // ikj accumulation; the per-element addition order matches a plain dot
  // product over ascending k, so row partitioning cannot change the bits.
  for (int i = i0; i < i1; ++i) {
    double* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    const double* ai = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      double av = ai[p];
      const double* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

inline void matmul_nt_rows(const double* a, const double* b, double* c, int m, int k, int n,
                           int i0, int i1) {
  for (int i = i0; i < i1; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = acc;
    }
  }
}

inline void matmul_tn_rows(const double* a, const double* b, double* c, int m, int k, int n,
                           int i0, int i1) {
  // c[i][j] = sum_p a[p][i] * b[p][j], accumulated over ascending p.
  for (int i = i0; i < i1; ++i) {
    double* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    for (int p = 0; p < k; ++p) {
      double av = a[static_cast<size_t>(p) * m + i];
      const double* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace

namespace serial {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  matmul_rows(a, b, c, m, k, n, 0, m);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  matmul_nt_rows(a, b, c, m, k, n, 0, m);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  matmul_tn_rows(a, b, c, m, k, n, 0, m);
}

void gelu(const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = gelu_one(x[i]);
}

void gelu_grad(const double* x, const double* g, double* dx, size_t n) {
  for (size_t i = 0; i < n; ++i) dx[i] = g[i] * gelu_grad_one(x[i]);
}

void sigmoid(const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = sigmoid_one(x[i]);
}

}  // namespace serial

namespace parallel {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) matmul_rows(a, b, c, m, k, n, i, i + 1);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) matmul_nt_rows(a, b, c, m, k, n, i, i + 1);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) matmul_tn_rows(a, b, c, m, k, n, i, i + 1);
}

void gelu(const double* x, double* y, size_t n) {
  long sn = static_cast<long>(n);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < sn; ++i) y[i] = gelu_one(x[i]);
}

void gelu_grad(const double* x, const double* g, double* dx, size_t n) {
  long sn = static_cast<long>(n);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < sn; ++i) dx[i] = g[i] * gelu_grad_one(x[i]);
}

void sigmoid(const double* x, double* y, size_t n) {
  long sn = static_cast<long>(n);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < sn; ++i) y[i] = sigmoid_one(x[i]);
}

}  // namespace parallel

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel_enabled(bool on) { g_parallel.store(on, std::memory_order_relaxed); }
size_t parallel_threshold() { return g_threshold.load(std::memory_order_relaxed); }
void set_parallel_threshold(size_t min_work) { g_threshold.store(min_work, std::memory_order_relaxed); }

namespace {
inline bool go_parallel(size_t work) { return parallel_enabled() && work >= parallel_threshold(); }
}  // namespace

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  size_t work = static_cast<size_t>(m) * k * n;
  if (go_parallel(work) && m > 1) {
    parallel::matmul(a, b, c, m, k, n);
  } else {
    serial::matmul(a, b, c, m, k, n);
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  size_t work = static_cast<size_t>(m) * k * n;
  if (go_parallel(work) && m > 1) {
    parallel::matmul_nt(a, b, c, m, k, n);
  } else {
    serial::matmul_nt(a, b, c, m, k, n);
  }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  size_t work = static_cast<size_t>(m) * k * n;
  if (go_parallel(work) && m > 1) {
    parallel::matmul_tn(a, b, c, m, k, n);
  } else {
    serial::matmul_tn(a, b, c, m, k, n);
  }
}

void gelu(const double* x, double* y, size_t n) {
  if (go_parallel(n * 8)) {
    parallel::gelu(x, y, n);
  } else {
    serial::gelu(x, y, n);
  }
}

void gelu_grad(const double* x, const double* g, double* dx, size_t n) {
  if (go_parallel(n * 8)) {
    parallel::gelu_grad(x, g, dx, n);
  } else {
    serial::gelu_grad(x, g, dx, n);
  }
}

void sigmoid(const double* x, double* y, size_t n) {
  if (go_parallel(n * 8)) {
    parallel::sigmoid(x, y, n);
  } else {
    serial::sigmoid(x, y, n);
  }
}

}  // namespace syp::kernels
