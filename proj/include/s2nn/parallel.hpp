#pragma once

#include <algorithm>
#include <cstdlib>
#ifdef _OPENMP
#include <omp.h>
#endif

namespace s2nn {

// Worker cap for every parallel loop. S2NN_THREADS (when set) bounds the
// OpenMP pool. All parallel loops in this library are gather-form -- each
// output element has exactly one writer -- so results are bit-identical for
// any thread count or schedule.
inline int max_threads() {
#ifdef _OPENMP
    static const int cap = [] {
        int n = omp_get_max_threads();
        if (const char* env = std::getenv("S2NN_THREADS")) {
            int v = std::atoi(env);
            if (v > 0) n = std::min(n, v);
        }
        return std::max(1, n);
    }();
    return cap;
#else
    return 1;
#endif
}

}  // namespace s2nn
