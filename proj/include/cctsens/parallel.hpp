#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <type_traits>
#include <vector>

namespace cctsens {

/// Evaluates fn(0..count-1) on up to `jobs` threads. Results keep index order,
/// so output never depends on scheduling. The first exception (lowest index)
/// is rethrown after all workers finish.
template <typename Fn>
auto parallel_map(std::size_t count, int jobs, Fn&& fn) {
    using R = std::invoke_result_t<Fn&, std::size_t>;
    std::vector<R> out(count);
    if (count == 0) return out;
    const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, jobs)));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) out[i] = fn(i);
        return out;
    }

    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::exception_ptr first_error;
    std::size_t first_index = count;
    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                out[i] = fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (i < first_index) {
                    first_index = i;
                    first_error = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

}  // namespace cctsens
