#pragma once

#include <cstddef>
#include <functional>
#include <optional>

namespace opelab {

/// Run task(i) for i in [0, count) on up to `jobs` threads. Every task runs
/// even if one throws; the exception of the lowest failing index is
/// rethrown after all threads join.
void parallel_for(std::size_t count, unsigned jobs, const std::function<void(std::size_t)>& task);

/// `requested` when set, else OPELAB_JOBS, else 1. Throws ArgumentError on
/// zero or an unparsable environment value.
unsigned resolve_jobs(std::optional<unsigned> requested);

}  // namespace opelab
