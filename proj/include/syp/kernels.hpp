#pragma once

#include <cstddef>

namespace syp::kernels {

// Dense kernels behind the tape primitives. Each has a serial reference and
// an OpenMP variant that splits work over independent output rows only, so
// the two produce bit-identical results; the unqualified entry point picks a
// variant from problem size and the global switch. The serial forms stay as
// the test oracle and the benchmark baseline.

namespace serial {
// c[m x n] = a[m x k] * b[k x n]
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
// c[m x n] = a[m x k] * b[n x k]^T
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
// c[m x n] = a[k x m]^T * b[k x n]
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void gelu(const double* x, double* y, size_t n);
void gelu_grad(const double* x, const double* g, double* dx, size_t n);
void sigmoid(const double* x, double* y, size_t n);
}  // namespace serial

namespace parallel {
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void gelu(const double* x, double* y, size_t n);
void gelu_grad(const double* x, const double* g, double* dx, size_t n);
void sigmoid(const double* x, double* y, size_t n);
}  // namespace parallel

// Global switch (on by default) plus a work threshold below which the
// dispatchers stay serial; tiny matrices are not worth a parallel region.
bool parallel_enabled();
void set_parallel_enabled(bool on);
size_t parallel_threshold();
void set_parallel_threshold(size_t min_work);

void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void gelu(const double* x, double* y, size_t n);
void gelu_grad(const double* x, const double* g, double* dx, size_t n);
void sigmoid(const double* x, double* y, size_t n);

}  // namespace syp::kernels
