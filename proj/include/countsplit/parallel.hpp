#ifndef COUNTSPLIT_PARALLEL_HPP
#define COUNTSPLIT_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace countsplit {

/**
 * Number of worker threads from `COUNTSPLIT_THREADS`, or 1 if unset or invalid.
 */
int threads_from_environment();

/**
 * Run `fn(i)` for `i` in `[0, count)` on up to `threads` workers.
 * Callers write results into index `i` of preallocated storage, so output order never depends on scheduling.
 * The first exception thrown by any task is rethrown after all workers stop.
 */
template<typename Function_>
void parallel_for(std::size_t count, int threads, Function_&& fn) {
    const auto workers = static_cast<std::size_t>(std::max(1, threads));
    if (workers == 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            fn(i);
        }
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_lock;
    auto body = [&]() {
        while (true) {
            const auto i = next.fetch_add(1);
            if (i >= count) {
                return;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> guard(error_lock);
                if (!error) {
                    error = std::current_exception();
                }
                next = count;
            }
        }
    };

    std::vector<std::thread> pool;
    const auto spawned = std::min(workers, count);
    pool.reserve(spawned);
    for (std::size_t t = 0; t < spawned; ++t) {
        pool.emplace_back(body);
    }
    for (auto& t : pool) {
        t.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

}

#endif
