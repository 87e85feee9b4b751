#pragma once

#include <cstddef>
#include <functional>

namespace advlab {

/// Thread cap from ADVLAB_THREADS, defaulting to 1 when unset or invalid.
std::size_t default_thread_count();

/// Runs fn(0..tasks-1) on up to `threads` workers. Tasks must write to
/// disjoint outputs; results therefore do not depend on the worker count.
/// The exception from the lowest-numbered failing task is rethrown.
void parallel_for(std::size_t tasks, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace advlab
