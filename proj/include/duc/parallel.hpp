#pragma once

#include <cstddef>
#include <functional>

namespace duc {

// Worker count: hardware concurrency, capped by the DUC_THREADS environment variable.
int worker_count();

// Runs fn(i) for i in [0, n) on up to worker_count() threads. Callers write
// results into per-index slots so the outcome never depends on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace duc
