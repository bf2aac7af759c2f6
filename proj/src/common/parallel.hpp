#pragma once

#include <cstddef>
#include <functional>

namespace lld {

// Number of worker threads: hardware concurrency, capped by LLD_THREADS when set.
int worker_count();

// Runs body(i) for i in [0, n) across workers. Each index is handled exactly
// once; callers write results into per-index slots and reduce afterwards in
// index order, so results do not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace lld
