#pragma once

#include <cstddef>
#include <functional>

namespace avdnet {

/// Number of worker threads used by parallel_for. Defaults to the hardware
/// concurrency; override with AVDNET_THREADS (>=1).
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on a shared fixed-size pool. Indices are
/// partitioned into contiguous chunks, so callers that write disjoint
/// locations per index get bit-identical results for any thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& chunk_fn);

}  // namespace avdnet
