// Compares the serial reference kernels against the OpenMP versions:
// wall time plus a bitwise equality check of every output. Exits
// nonzero if any pair of results differs, so it doubles as a sanity
// gate in scripted runs.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "marl/kernels.hpp"

using namespace marl;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

bool bitwise_equal(const Vec& a, const Vec& b) {
  return a.size() == b.size() &&
         (a.empty() ||
          std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

bool bitwise_equal(const std::vector<Vec>& a, const std::vector<Vec>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (!bitwise_equal(a[i], b[i])) return false;
  return true;
}

bool bitwise_equal(const GradientSet& a, const GradientSet& b) {
  return bitwise_equal(a.d_weights, b.d_weights) &&
         bitwise_equal(a.d_biases, b.d_biases);
}

Vec random_vec(size_t n, Rng& rng) {
  Vec v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

struct Case {
  std::vector<int> sizes;
  size_t batch;
  int reps;
};

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP threads: %d\n\n", omp_get_max_threads());
#else
  std::printf("built without OpenMP; both columns run the serial path\n\n");
#endif

  const std::vector<Case> cases = {
      {{8, 32, 32, 4}, 256, 40},
      {{16, 64, 64, 8}, 512, 15},
      {{32, 128, 128, 16}, 1024, 4},
  };

  std::printf("%-22s %6s  %12s %12s %8s  %s\n", "shape", "batch", "serial(ms)",
              "omp(ms)", "speedup", "bitwise");
  bool all_equal = true;

  for (const auto& c : cases) {
    Mlp net = init_params(c.sizes, 7);
    Rng rng(derive_seed(7, "bench"));
    std::vector<Vec> xs(c.batch), ups(c.batch);
    for (size_t i = 0; i < c.batch; ++i) {
      xs[i] = random_vec(c.sizes.front(), rng);
      ups[i] = random_vec(c.sizes.back(), rng);
    }

    char shape[64];
    int off = 0;
    for (size_t i = 0; i < c.sizes.size(); ++i)
      off += std::snprintf(shape + off, sizeof(shape) - off, "%s%d",
                           i ? "x" : "", c.sizes[i]);

    // forward
    auto t0 = Clock::now();
    std::vector<Vec> fs;
    for (int r = 0; r < c.reps; ++r) fs = kernels::serial::batch_forward(net, xs);
    double serial_ms = ms_since(t0) / c.reps;
    t0 = Clock::now();
    std::vector<Vec> fp;
    for (int r = 0; r < c.reps; ++r) fp = kernels::batch_forward(net, xs);
    double omp_ms = ms_since(t0) / c.reps;
    bool eq = bitwise_equal(fs, fp);
    all_equal = all_equal && eq;
    std::printf("forward  %-13s %6zu  %12.3f %12.3f %8.2f  %s\n", shape,
                c.batch, serial_ms, omp_ms, serial_ms / omp_ms,
                eq ? "equal" : "DIFFER");

    // backward reduction
    t0 = Clock::now();
    GradientSet gs;
    for (int r = 0; r < c.reps; ++r)
      gs = kernels::serial::backward_sum(net, xs, ups);
    serial_ms = ms_since(t0) / c.reps;
    t0 = Clock::now();
    GradientSet gp;
    for (int r = 0; r < c.reps; ++r) gp = kernels::backward_sum(net, xs, ups);
    omp_ms = ms_since(t0) / c.reps;
    eq = bitwise_equal(gs, gp);
    all_equal = all_equal && eq;
    std::printf("backward %-13s %6zu  %12.3f %12.3f %8.2f  %s\n", shape,
                c.batch, serial_ms, omp_ms, serial_ms / omp_ms,
                eq ? "equal" : "DIFFER");
  }

  if (!all_equal) {
    std::printf("\nFAIL: kernel outputs differ between implementations\n");
    return 1;
  }
  std::printf("\nall kernel outputs bitwise identical\n");
  return 0;
}
