#pragma once

#include <cstddef>
#include <functional>

namespace dalign {

/// Runs body(i) for i in [0, n) on up to `threads` workers. Each index must be
/// independent; callers derive randomness from the index, so results do not
/// depend on the worker count.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

}  // namespace dalign
