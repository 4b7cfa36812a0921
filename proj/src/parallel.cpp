#include "mpol/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mpol {

int Execution::resolved_threads() const {
    if (threads > 0) return threads;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_items(Index count, const Execution& exec, const std::function<void(Index)>& body) {
    if (count <= 0) return;
    const int workers = static_cast<int>(std::min<Index>(exec.resolved_threads(), count));
    if (workers <= 1) {
        for (Index i = 0; i < count; ++i) body(i);
        return;
    }

    std::atomic<Index> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto run = [&] {
        for (Index i = next++; i < count; i = next++) {
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = count;
            }
        }
    };

    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    for (int w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    pool.clear();
    if (failure) std::rethrow_exception(failure);
}

void parallel_rows(Index rows, const Execution& exec,
                   const std::function<void(Index, Index)>& body) {
    const Index tile = std::max<Index>(1, exec.tile);
    const Index bands = (rows + tile - 1) / tile;
    parallel_items(bands, exec, [&](Index b) {
        const Index begin = b * tile;
        body(begin, std::min(rows, begin + tile));
    });
}

}  // namespace mpol
