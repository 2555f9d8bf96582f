#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace etdkf {

// Runs fn(slot) for slot in [0, n_jobs) on a bounded pool.  Threads take
// strided slots, every slot writes only its own output, and exceptions are
// re-thrown after the join in slot order — so results and failures are
// independent of scheduling.
template <typename Fn>
inline void parallel_for_slots(int n_jobs, Fn&& fn, unsigned max_workers = 0) {
    if (n_jobs <= 0) return;
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (max_workers > 0) hw = std::min(hw, max_workers);
    const unsigned workers = std::min<unsigned>(hw, static_cast<unsigned>(n_jobs));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_jobs));

    if (workers <= 1) {
        for (int i = 0; i < n_jobs; ++i) fn(i);
        return;
    }

    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (int i = static_cast<int>(w); i < n_jobs; i += static_cast<int>(workers)) {
                try {
                    fn(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(i)] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace etdkf
