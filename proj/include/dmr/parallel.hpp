#pragma once

#include <cstddef>
#include <functional>

namespace dmr {

/// Caps worker lanes for every parallel scan (the CLI `--threads` flag).
/// Defaults to 1; 0 means hardware concurrency.
void set_thread_count(std::size_t n);
std::size_t thread_count();

/// Runs fn(i) for i in [0, n). Work is split into contiguous static ranges so
/// each index is always handled the same way regardless of lane count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Runs fn(chunk, begin, end) over `chunks` fixed contiguous ranges of [0, n).
/// The partition depends only on (n, chunks), so callers that reduce per-chunk
/// partials in chunk order get results independent of the lane count.
void parallel_chunks(std::size_t n, std::size_t chunks,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

}  // namespace dmr
