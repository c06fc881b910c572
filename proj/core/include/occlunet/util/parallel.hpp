#pragma once

#include <cstddef>
#include <functional>

namespace occlunet::util {

/// Number of worker threads used by parallel_for. Defaults to the hardware
/// concurrency; 1 runs everything inline on the calling thread.
void set_num_threads(int n);
int num_threads();

/// Runs fn(i) for i in [0, n). Iterations are split into contiguous ranges,
/// one per worker. Callers must not depend on execution order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace occlunet::util
