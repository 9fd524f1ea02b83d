#include "vmt/kernels.hpp"

#include <atomic>

namespace vmt::kernels {

namespace {

std::atomic<Mode> g_mode{Mode::automatic};
std::atomic<int64_t> g_threshold{1 << 18};

// One row of C, shared by the serial and OpenMP drivers so both accumulate in
// the same order.
inline void matmul_row(const double* a, const double* b, double* c, int64_t i, int64_t m,
                       int64_t k, int64_t n, bool ta, bool tb) {
  double* crow = c + i * n;
  for (int64_t j = 0; j < n; ++j) crow[j] = 0.0;
  if (!tb) {
    for (int64_t p = 0; p < k; ++p) {
      const double aip = ta ? a[p * m + i] : a[i * k + p];
      const double* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  } else {
    for (int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) {
        const double aip = ta ? a[p * m + i] : a[i * k + p];
        acc += aip * brow[p];
      }
      crow[j] = acc;
    }
  }
}

}  // namespace

void set_mode(Mode m) { g_mode.store(m); }
Mode mode() { return g_mode.load(); }

void set_parallel_threshold(int64_t work) { g_threshold.store(work); }
int64_t parallel_threshold() { return g_threshold.load(); }

int max_threads() {
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

bool parallel_for_work(int64_t work) {
#if defined(_OPENMP)
  if (omp_in_parallel()) return false;
  switch (g_mode.load()) {
    case Mode::serial:
      return false;
    case Mode::openmp:
      return true;
    case Mode::automatic:
      return max_threads() > 1 && work >= g_threshold.load();
  }
  return false;
#else
  (void)work;
  return false;
#endif
}

void matmul_serial(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
                   bool ta, bool tb) {
  for (int64_t i = 0; i < m; ++i) matmul_row(a, b, c, i, m, k, n, ta, tb);
}

void matmul_omp(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
                bool ta, bool tb) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) matmul_row(a, b, c, i, m, k, n, ta, tb);
#else
  matmul_serial(a, b, c, m, k, n, ta, tb);
#endif
}

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n, bool ta,
            bool tb) {
  if (parallel_for_work(m * k * n)) {
    matmul_omp(a, b, c, m, k, n, ta, tb);
  } else {
    matmul_serial(a, b, c, m, k, n, ta, tb);
  }
}

void axpby_serial(int64_t n, double alpha, const double* a, double beta, const double* b,
                  double* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = alpha * a[i] + beta * b[i];
}

void axpby_omp(int64_t n, double alpha, const double* a, double beta, const double* b,
               double* out) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) out[i] = alpha * a[i] + beta * b[i];
#else
  axpby_serial(n, alpha, a, beta, b, out);
#endif
}

void axpby(int64_t n, double alpha, const double* a, double beta, const double* b, double* out) {
  if (parallel_for_work(n)) {
    axpby_omp(n, alpha, a, beta, b, out);
  } else {
    axpby_serial(n, alpha, a, beta, b, out);
  }
}

}  // namespace vmt::kernels
