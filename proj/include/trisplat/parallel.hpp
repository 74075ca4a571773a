#pragma once

#include <cstddef>
#include <functional>
#include <span>

namespace trisplat {

/// Worker count used by parallel_for. 0 selects hardware concurrency.
void set_num_threads(unsigned count);
unsigned num_threads();

/// Runs task(i) for every i in [0, count). Work items are handed out in
/// blocks whose boundaries do not depend on the worker count, so a task that
/// writes only to slot i gives identical results for any thread setting.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& task);

/// Pairwise (cascade) summation. Fixed association order for a given length.
double pairwise_sum(std::span<const double> values);

}  // namespace trisplat
