#pragma once

#include <cstddef>
#include <functional>

namespace kprobe {

/// Worker cap from KPROBE_THREADS, else the hardware concurrency (>= 1).
int worker_threads();

/// Calls fn(k) for k in [0, n), spread over up to worker_threads() threads.
/// fn must only write to state owned by index k.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace kprobe
