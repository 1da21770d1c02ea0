#pragma once

#include <atomic>
#include <cstddef>
#include <functional>

namespace zinflate {

/// Worker count to use when the caller passes 0.
unsigned default_threads();

/// Runs fn(0..count-1) on up to `threads` workers. Tasks are claimed in index
/// order; the first exception thrown by any task is rethrown after all
/// workers finish. When `stop` is set, no further tasks are started.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn,
                  const std::atomic<bool>* stop = nullptr);

}  // namespace zinflate
