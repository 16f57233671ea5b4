#pragma once

#include <cstdint>
#include <functional>

namespace ganorcon {

// Worker count: GANORCON_THREADS env var, else hardware concurrency (capped).
int num_threads();

// Runs fn(begin, end) over a deterministic partition of [0, n). The partition
// depends only on n, never on the worker count, so reductions that combine
// per-range partials in range order produce identical results for any thread
// count. Ranges may execute on any thread; fn must only write disjoint data
// or per-range buffers.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

// Same contract, with the range index exposed (for per-range partial buffers).
// The number of ranges is fixed by n alone; returns that count.
int parallel_ranges(int64_t n, const std::function<void(int, int64_t, int64_t)>& fn);

// Number of ranges parallel_ranges will use for a given n.
int range_count(int64_t n);

}  // namespace ganorcon
