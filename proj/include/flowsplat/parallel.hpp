#pragma once

#include <algorithm>
#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace flowsplat {

// Worker count is process-global, set once by the CLI / test harness.
// All parallel loops below are bitwise-deterministic for any worker count:
// work is split into fixed chunks that do not depend on the thread count,
// and any reduction happens chunk-by-chunk on the calling thread.
int worker_count();
void set_worker_count(int n);

namespace detail {
inline std::atomic<int>& worker_count_storage() {
    static std::atomic<int> count{4};
    return count;
}
} // namespace detail

inline int worker_count() { return detail::worker_count_storage().load(); }

inline void set_worker_count(int n) {
    detail::worker_count_storage().store(std::max(1, n));
}

// Runs fn(chunk_index) for chunk_index in [0, n_chunks). Chunks are handed
// out via an atomic counter; fn must only write to chunk-local state.
inline void parallel_chunks(int n_chunks, const std::function<void(int)>& fn) {
    const int workers = std::min(worker_count(), n_chunks);
    if (workers <= 1) {
        for (int c = 0; c < n_chunks; ++c) fn(c);
        return;
    }
    std::atomic<int> next{0};
    auto body = [&] {
        while (true) {
            const int c = next.fetch_add(1);
            if (c >= n_chunks) break;
            fn(c);
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers) - 1);
    for (int w = 1; w < workers; ++w) pool.emplace_back(body);
    body();
    for (auto& t : pool) t.join();
}

// Parallel loop over [begin, end) with a fixed chunk width. Each index is
// processed exactly once; fn(i) must only touch state owned by index i.
inline void parallel_for(int begin, int end, const std::function<void(int)>& fn,
                         int chunk = 16) {
    const int n = end - begin;
    if (n <= 0) return;
    const int n_chunks = (n + chunk - 1) / chunk;
    parallel_chunks(n_chunks, [&](int c) {
        const int lo = begin + c * chunk;
        const int hi = std::min(end, lo + chunk);
        for (int i = lo; i < hi; ++i) fn(i);
    });
}

} // namespace flowsplat
