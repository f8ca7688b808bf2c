#pragma once

#include <atomic>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace convocc {

// Runs fn(0..n-1) on `jobs` threads. Callers needing determinism must make
// per-index work independent and reduce results in index order afterwards.
inline void parallel_for(int64_t n, int jobs, const std::function<void(int64_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int64_t> next{0};
    std::vector<std::thread> workers;
    int count = static_cast<int>(std::min<int64_t>(jobs, n));
    workers.reserve(static_cast<size_t>(count));
    std::exception_ptr error;
    std::mutex error_mutex;
    for (int w = 0; w < count; ++w)
        workers.emplace_back([&] {
            for (;;) {
                int64_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    for (auto& w : workers) w.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace convocc
