// Times the serial reference kernels against their OpenMP variants and
// reports matching speedups. Run with no arguments for the default grid.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include <omp.h>

#include "syp/kernels.hpp"
#include "syp/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds_per_call(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  auto t1 = Clock::now();
  return std::chrono::duration<double>(t1 - t0).count() / reps;
}

void bench_matmul(int n, int reps) {
  syp::Rng rng(12345);
  std::vector<double> a(static_cast<size_t>(n) * n), b(a.size()), c(a.size());
  for (auto& x : a) x = rng.normal();
  for (auto& x : b) x = rng.normal();

  double ts = seconds_per_call([&] { syp::kernels::serial::matmul(a.data(), b.data(), c.data(), n, n, n); }, reps);
  double tp = seconds_per_call([&] { syp::kernels::parallel::matmul(a.data(), b.data(), c.data(), n, n, n); }, reps);
  double flops = 2.0 * n * n * n;
  std::printf("matmul    %5dx%-5d serial %8.3f ms (%6.2f GF/s)   omp %8.3f ms (%6.2f GF/s)   speedup %.2fx\n",
              n, n, ts * 1e3, flops / ts * 1e-9, tp * 1e3, flops / tp * 1e-9, ts / tp);
}

void bench_gelu(size_t n, int reps) {
  syp::Rng rng(6789);
  std::vector<double> x(n), y(n);
  for (auto& v : x) v = rng.normal();
  double ts = seconds_per_call([&] { syp::kernels::serial::gelu(x.data(), y.data(), n); }, reps);
  double tp = seconds_per_call([&] { syp::kernels::parallel::gelu(x.data(), y.data(), n); }, reps);
  std::printf("gelu      n=%-9zu serial %8.3f ms (%6.1f Melem/s) omp %8.3f ms (%6.1f Melem/s) speedup %.2fx\n",
              n, ts * 1e3, n / ts * 1e-6, tp * 1e3, n / tp * 1e-6, ts / tp);
}

}  // namespace

int main() {
  std::printf("threads: %d\n", omp_get_max_threads());
  for (int n : {32, 64, 128, 256, 512}) bench_matmul(n, n <= 128 ? 50 : 8);
  for (size_t n : {size_t(10000), size_t(100000), size_t(1000000)}) bench_gelu(n, 20);
  return 0;
}
