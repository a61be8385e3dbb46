#pragma once

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace smcgm {

// Static range partition over worker threads. The body must be pure
// per index (independent RNG streams, disjoint writes); reductions
// that depend on summation order stay with the caller so results are
// thread-count independent.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& body) {
    if (n == 0) return;
    if (threads <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const unsigned nt = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    std::vector<std::thread> pool;
    pool.reserve(nt);
    std::vector<std::exception_ptr> errors(nt);
    for (unsigned t = 0; t < nt; ++t) {
        pool.emplace_back([&, t] {
            const std::size_t lo = n * t / nt;
            const std::size_t hi = n * (t + 1) / nt;
            try {
                for (std::size_t i = lo; i < hi; ++i) body(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace smcgm
