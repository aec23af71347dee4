#include "marl/kernels.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace marl::kernels {

namespace serial {

std::vector<Vec> batch_forward(const Mlp& net, const std::vector<Vec>& xs) {
  std::vector<Vec> ys(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) ys[i] = forward(net, xs[i]);
  return ys;
}

GradientSet backward_sum(const Mlp& net, const std::vector<Vec>& xs,
                         const std::vector<Vec>& upstreams) {
  if (xs.size() != upstreams.size())
    throw ShapeError("backward_sum: xs/upstreams length mismatch");
  GradientSet total = GradientSet::zeros_like(net);
  ForwardCache cache;
  // Same bracketing as the parallel version: per-block partials added in
  // block order. The reduction order is part of the kernel contract.
  for (size_t lo = 0; lo < xs.size(); lo += kReductionBlock) {
    const size_t hi = std::min(lo + kReductionBlock, xs.size());
    GradientSet part = GradientSet::zeros_like(net);
    for (size_t i = lo; i < hi; ++i) {
      forward(net, xs[i], cache);
      backward_accumulate(net, cache, upstreams[i], part);
    }
    total.add(part);
  }
  return total;
}

void for_each_index(size_t n, const std::function<void(size_t)>& f) {
  for (size_t i = 0; i < n; ++i) f(i);
}

}  // namespace serial

std::vector<Vec> batch_forward(const Mlp& net, const std::vector<Vec>& xs) {
  std::vector<Vec> ys(xs.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(xs.size()); ++i)
    ys[i] = forward(net, xs[i]);
  return ys;
}

GradientSet backward_sum(const Mlp& net, const std::vector<Vec>& xs,
                         const std::vector<Vec>& upstreams) {
  if (xs.size() != upstreams.size())
    throw ShapeError("backward_sum: xs/upstreams length mismatch");
  const size_t n = xs.size();
  if (n == 0) return GradientSet::zeros_like(net);
  const size_t n_blocks = (n + kReductionBlock - 1) / kReductionBlock;
  std::vector<GradientSet> partials(n_blocks, GradientSet::zeros_like(net));
#pragma omp parallel for schedule(static)
  for (long b = 0; b < static_cast<long>(n_blocks); ++b) {
    const size_t lo = static_cast<size_t>(b) * kReductionBlock;
    const size_t hi = std::min(lo + kReductionBlock, n);
    ForwardCache cache;
    for (size_t i = lo; i < hi; ++i) {
      forward(net, xs[i], cache);
      backward_accumulate(net, cache, upstreams[i], partials[b]);
    }
  }
  // Block partials combined in block order: same bits for 1 or N threads,
  // and the same zero-init add sequence as the serial reference.
  GradientSet total = GradientSet::zeros_like(net);
  for (size_t b = 0; b < n_blocks; ++b) total.add(partials[b]);
  return total;
}

void parallel_for_index(size_t n, const std::function<void(size_t)>& f) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(n); ++i) f(static_cast<size_t>(i));
}

void parallel_for_index(size_t n, int max_threads,
                        const std::function<void(size_t)>& f) {
  if (max_threads < 1) max_threads = 1;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads)
  for (long i = 0; i < static_cast<long>(n); ++i) f(static_cast<size_t>(i));
#else
  for (size_t i = 0; i < n; ++i) f(i);
#endif
}

}  // namespace marl::kernels
