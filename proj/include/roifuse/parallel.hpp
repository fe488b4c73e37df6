#pragma once

#include <cstddef>
#include <functional>

namespace roifuse {

/// Worker count: ROIFUSE_THREADS when set to a positive integer, otherwise
/// the hardware concurrency (at least 1).
std::size_t thread_count();

/// Runs fn(i) for i in [0, n) on up to thread_count() threads. Work items
/// must be independent; the first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace roifuse
