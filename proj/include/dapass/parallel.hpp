#pragma once

#include <cstdint>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dapass {

namespace detail {
inline int& thread_override() {
    static int v = 0;  // 0 = no override
    return v;
}
}  // namespace detail

// Worker cap: DAPASS_THREADS env, optionally overridden at runtime (tests, bench).
inline int max_threads() {
    if (detail::thread_override() > 0) return detail::thread_override();
    static int env_cap = [] {
        const char* e = std::getenv("DAPASS_THREADS");
        if (e != nullptr) {
            int v = std::atoi(e);
            if (v > 0) return v;
        }
        return 0;
    }();
#ifdef _OPENMP
    int hw = omp_get_max_threads();
#else
    int hw = 1;
#endif
    if (env_cap > 0 && env_cap < hw) return env_cap;
    return hw;
}

// Scoped worker-count override. Used by the serial/parallel comparison tests
// and by the benchmark; results must be identical for any setting.
struct ThreadLimitGuard {
    int prev;
    explicit ThreadLimitGuard(int n) : prev(detail::thread_override()) {
        detail::thread_override() = n;
    }
    ~ThreadLimitGuard() { detail::thread_override() = prev; }
};

// Runs f(i) for i in [0, n). Every index is owned by exactly one invocation,
// so kernels that only write their own elements are deterministic under any
// thread count.
template <typename F>
inline void parallel_for(int64_t n, F&& f) {
#ifdef _OPENMP
    const int nt = max_threads();
    if (nt > 1 && n > 1) {
#pragma omp parallel for schedule(static) num_threads(nt)
        for (int64_t i = 0; i < n; ++i) f(i);
        return;
    }
#endif
    for (int64_t i = 0; i < n; ++i) f(i);
}

}  // namespace dapass
