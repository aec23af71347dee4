#pragma once

#include <cstddef>
#include <functional>

#include "marl/approx.hpp"

namespace marl::kernels {

// Batch-level compute kernels. Each has two implementations:
//
//   serial::  -- straightforward reference loops, kept for testing and
//                as the baseline in the benchmark tool
//   omp       -- OpenMP versions used by the training path
//
// The parallel versions are designed to be bitwise deterministic for
// any thread count: row kernels write disjoint output slots, and
// reductions accumulate fixed-size blocks that are combined in block
// order. Training always goes through these, so trajectories do not
// depend on OMP_NUM_THREADS.

// Rows of `xs` pushed through `net` independently.
namespace serial {
std::vector<Vec> batch_forward(const Mlp& net, const std::vector<Vec>& xs);

// Sum over rows of the gradient of (upstream[i] . net(xs[i])).
GradientSet backward_sum(const Mlp& net, const std::vector<Vec>& xs,
                         const std::vector<Vec>& upstreams);

// out[i] = f(i); plain loop.
void for_each_index(size_t n, const std::function<void(size_t)>& f);
}  // namespace serial

std::vector<Vec> batch_forward(const Mlp& net, const std::vector<Vec>& xs);

GradientSet backward_sum(const Mlp& net, const std::vector<Vec>& xs,
                         const std::vector<Vec>& upstreams);

// Parallel loop over independent slots (episodes, rows). `f(i)` must
// only touch state owned by index i.
void parallel_for_index(size_t n, const std::function<void(size_t)>& f);
void parallel_for_index(size_t n, int max_threads,
                        const std::function<void(size_t)>& f);

// Rows per reduction block. Fixed so that the floating-point summation
// order never depends on the thread count.
inline constexpr size_t kReductionBlock = 64;

}  // namespace marl::kernels
