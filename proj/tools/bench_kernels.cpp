// Compares the serial kernels against the OpenMP ones: wall time per call and
// a bitwise equality check on the outputs. The parallel paths must agree with
// the serial reference to the last bit, so any nonzero mismatch count below is
// a bug, not rounding.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "vmt/kernels.hpp"
#include "vmt/rng.hpp"

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::vector<double> random_vec(int64_t n, uint64_t seed) {
  vmt::RngStream rng(seed);
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

template <class Fn>
double time_best_of(int reps, Fn&& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const double t0 = now_s();
    fn();
    best = std::min(best, now_s() - t0);
  }
  return best;
}

int64_t count_mismatch(const std::vector<double>& a, const std::vector<double>& b) {
  int64_t bad = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) ++bad;
  }
  return bad;
}

}  // namespace

int main() {
  std::printf("threads available: %d\n\n", vmt::kernels::max_threads());
  std::printf("%-22s %12s %12s %8s %10s\n", "kernel", "serial_ms", "omp_ms", "speedup",
              "mismatch");

  int64_t total_bad = 0;
  for (const int64_t n : {64, 128, 256, 512}) {
    const auto a = random_vec(n * n, 1);
    const auto b = random_vec(n * n, 2);
    std::vector<double> cs(static_cast<size_t>(n * n));
    std::vector<double> co(static_cast<size_t>(n * n));

    const double ts = time_best_of(5, [&] {
      vmt::kernels::matmul_serial(a.data(), b.data(), cs.data(), n, n, n, false, false);
    });
    const double to = time_best_of(5, [&] {
      vmt::kernels::matmul_omp(a.data(), b.data(), co.data(), n, n, n, false, false);
    });
    const int64_t bad = count_mismatch(cs, co);
    total_bad += bad;
    char label[32];
    std::snprintf(label, sizeof(label), "matmul %lldx%lld", static_cast<long long>(n),
                  static_cast<long long>(n));
    std::printf("%-22s %12.3f %12.3f %8.2f %10lld\n", label, ts * 1e3, to * 1e3,
                to > 0 ? ts / to : 0.0, static_cast<long long>(bad));
  }

  for (const int64_t n : {1 << 16, 1 << 20}) {
    const auto a = random_vec(n, 3);
    const auto b = random_vec(n, 4);
    std::vector<double> cs(static_cast<size_t>(n));
    std::vector<double> co(static_cast<size_t>(n));

    const double ts =
        time_best_of(5, [&] { vmt::kernels::axpby_serial(n, 0.75, a.data(), -0.25, b.data(), cs.data()); });
    const double to =
        time_best_of(5, [&] { vmt::kernels::axpby_omp(n, 0.75, a.data(), -0.25, b.data(), co.data()); });
    const int64_t bad = count_mismatch(cs, co);
    total_bad += bad;
    char label[32];
    std::snprintf(label, sizeof(label), "axpby %lld", static_cast<long long>(n));
    std::printf("%-22s %12.3f %12.3f %8.2f %10lld\n", label, ts * 1e3, to * 1e3,
                to > 0 ? ts / to : 0.0, static_cast<long long>(bad));
  }

  if (total_bad != 0) {
    std::printf("\nFAIL: %lld coordinates differ between serial and OpenMP\n",
                static_cast<long long>(total_bad));
    return 1;
  }
  std::printf("\nall outputs bitwise identical\n");
  return 0;
}
