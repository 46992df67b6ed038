#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace gcalc {

/// Worker count: GCALC_THREADS if set and positive, else hardware concurrency (at least 1).
std::size_t thread_count();

/// Runs body(i) for i in [0, count) split into contiguous chunks across worker threads.
/// Iterations must be independent; results must not depend on the chunking.
void parallel_for(std::size_t count, const std::function<void(std::size_t begin, std::size_t end)>& body,
                  std::size_t min_chunk = 256);

/// splitmix64 step; used to derive per-path seeds from a root seed.
std::uint64_t splitmix64(std::uint64_t x);

} // namespace gcalc
