#pragma once

#include "mpol/types.hpp"

namespace mpol {

/// Half-sample symmetric reflection: -1 -> 0, -2 -> 1, n -> n-1.
/// Valid for any integer offset, including reflections wider than n.
inline Index mirror_index(Index i, Index n) {
    if (n == 1) return 0;
    const Index period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

}  // namespace mpol
