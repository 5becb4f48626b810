#pragma once

#include <cstddef>
#include <functional>

namespace dust {

/// Worker count: DUST_THREADS when set to a positive integer, otherwise the
/// hardware concurrency. Read once per process.
std::size_t thread_count();

/// Runs body(i) for i in [0, n). Iterations must write disjoint outputs; the
/// caller reduces any per-iteration partials in index order so results do not
/// depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace dust
