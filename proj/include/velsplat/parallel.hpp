#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace velsplat {

/// Effective worker count: the VELSPLAT_THREADS environment variable
/// overrides the configured value; anything below 1 means single-threaded.
inline int resolve_thread_count(int configured) {
    if (const char* env = std::getenv("VELSPLAT_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    return configured >= 1 ? configured : 1;
}

/// Runs chunk_fn(0 .. n_chunks-1) across workers. Chunks must write only to
/// chunk-indexed slots; callers merge those slots in chunk order afterwards,
/// which keeps results byte-identical for every thread count.
inline void parallel_chunks(int n_chunks, int threads, const std::function<void(int)>& chunk_fn) {
    if (threads <= 1 || n_chunks <= 1) {
        for (int c = 0; c < n_chunks; ++c) chunk_fn(c);
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int c = next.fetch_add(1); c < n_chunks; c = next.fetch_add(1)) chunk_fn(c);
    };
    std::vector<std::thread> pool;
    const int spawn = std::min(threads, n_chunks) - 1;
    pool.reserve(static_cast<std::size_t>(spawn));
    for (int i = 0; i < spawn; ++i) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
}

} // namespace velsplat
