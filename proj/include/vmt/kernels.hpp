#pragma once

#include <cstdint>

#if defined(_OPENMP)
#include <omp.h>
#endif

// Inner-loop kernels. Every kernel has a serial reference implementation and
// an OpenMP variant; the unsuffixed entry point dispatches between them.
//
// Parallel variants split work across independent output elements only, so
// the accumulation order per element is identical to the serial reference and
// results are bit-exact regardless of thread count. Order-sensitive
// reductions (sum, mean) deliberately have no parallel variant.
namespace vmt::kernels {

enum class Mode { serial, openmp, automatic };

void set_mode(Mode m);
Mode mode();

// Minimum work (flops for matmul, elements otherwise) before the automatic
// dispatcher considers going parallel.
void set_parallel_threshold(int64_t work);
int64_t parallel_threshold();

int max_threads();
bool parallel_for_work(int64_t work);

// c = op(a) @ op(b), a is m x k (k x m when ta), b is k x n (n x k when tb).
void matmul_serial(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
                   bool ta, bool tb);
void matmul_omp(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
                bool ta, bool tb);
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool ta = false, bool tb = false);

// out = alpha*a + beta*b
void axpby_serial(int64_t n, double alpha, const double* a, double beta, const double* b,
                  double* out);
void axpby_omp(int64_t n, double alpha, const double* a, double beta, const double* b, double* out);
void axpby(int64_t n, double alpha, const double* a, double beta, const double* b, double* out);

template <class F>
void map_serial(int64_t n, const double* a, double* out, F f) {
  for (int64_t i = 0; i < n; ++i) out[i] = f(a[i]);
}

template <class F>
void map_omp(int64_t n, const double* a, double* out, F f) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) out[i] = f(a[i]);
#else
  map_serial(n, a, out, f);
#endif
}

template <class F>
void map(int64_t n, const double* a, double* out, F f) {
  if (parallel_for_work(n)) {
    map_omp(n, a, out, f);
  } else {
    map_serial(n, a, out, f);
  }
}

template <class F>
void zip_serial(int64_t n, const double* a, const double* b, double* out, F f) {
  for (int64_t i = 0; i < n; ++i) out[i] = f(a[i], b[i]);
}

template <class F>
void zip_omp(int64_t n, const double* a, const double* b, double* out, F f) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) out[i] = f(a[i], b[i]);
#else
  zip_serial(n, a, b, out, f);
#endif
}

template <class F>
void zip(int64_t n, const double* a, const double* b, double* out, F f) {
  if (parallel_for_work(n)) {
    zip_omp(n, a, b, out, f);
  } else {
    zip_serial(n, a, b, out, f);
  }
}

}  // namespace vmt::kernels
