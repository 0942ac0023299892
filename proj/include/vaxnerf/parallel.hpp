#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#if defined(__SSE2__) || defined(_M_X64)
#include <xmmintrin.h>
#define VAXNERF_HAS_MXCSR 1
#endif

namespace vaxnerf {

/// Flushes subnormal floats to zero on the calling thread while in scope.
class ScopedFlushDenormals {
public:
#ifdef VAXNERF_HAS_MXCSR
    ScopedFlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }  // FTZ | DAZ
    ~ScopedFlushDenormals() { _mm_setcsr(saved_); }

private:
    unsigned saved_;

public:
#else
    ScopedFlushDenormals() = default;
#endif
    ScopedFlushDenormals(const ScopedFlushDenormals&) = delete;
    ScopedFlushDenormals& operator=(const ScopedFlushDenormals&) = delete;
};

inline unsigned default_threads() {
    unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : n;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items are
/// claimed dynamically; callers that need determinism must make fn(i)
/// depend only on i. The first exception thrown by a worker is rethrown.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    if (n == 0) return;
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(n);
                return;
            }
        }
    };
    std::vector<std::jthread> pool;
    pool.reserve(threads - 1);
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    pool.clear();
    if (error) std::rethrow_exception(error);
}

/// Pairwise sum of items[0..n) in a fixed tree order (by index), independent
/// of how the items were produced. `add(a, b)` accumulates b into a.
template <class T, class Add>
void tree_reduce(std::vector<T>& items, Add&& add) {
    for (std::size_t stride = 1; stride < items.size(); stride *= 2) {
        for (std::size_t i = 0; i + stride < items.size(); i += 2 * stride) add(items[i], items[i + stride]);
    }
}

}  // namespace vaxnerf
