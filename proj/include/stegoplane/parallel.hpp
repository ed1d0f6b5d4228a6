#pragma once

#include <cstdint>
#include <functional>

namespace stegoplane {

// Worker cap: STEGOPLANE_THREADS if set, otherwise hardware concurrency.
int max_threads();

// Runs fn(i) for i in [0, n). Work items must be independent and write to
// disjoint slots so results do not depend on the thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)> & fn);

} // namespace stegoplane
