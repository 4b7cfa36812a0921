#pragma once

#include "mpol/types.hpp"

#include <functional>

namespace mpol {

/// How a per-pixel kernel is scheduled. Results never depend on these values.
struct Execution {
    int threads = 0;   ///< 0 = hardware concurrency
    Index tile = 64;   ///< rows per work item

    int resolved_threads() const;
};

/// Runs `body(row_begin, row_end)` over disjoint row bands of `rows` rows.
/// Bands are claimed dynamically by the workers; the caller must only write
/// pixels inside the band it was handed.
void parallel_rows(Index rows, const Execution& exec,
                   const std::function<void(Index, Index)>& body);

/// Runs `body(i)` for i in [0, count) on the worker pool.
void parallel_items(Index count, const Execution& exec, const std::function<void(Index)>& body);

}  // namespace mpol
