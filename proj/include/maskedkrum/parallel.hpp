#pragma once

#include <cstddef>
#include <functional>

namespace maskedkrum {

// Thread cap: MASKEDKRUM_THREADS if set to a positive integer, otherwise the
// hardware concurrency (at least 1).
std::size_t default_thread_count();

// Runs body(begin, end) over contiguous blocks of [0, count) on up to
// `threads` threads. Blocks are disjoint, so results do not depend on the
// thread count as long as body writes only to its own block.
void parallel_blocks(std::size_t count, std::size_t threads,
                     const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace maskedkrum
