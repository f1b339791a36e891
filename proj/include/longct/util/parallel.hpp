#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace longct {

/// Parallel loop over [0, n). Each index is processed by exactly one thread,
/// so loops without shared accumulation are deterministic.
template <typename F>
void parallel_for(int64_t n, F&& fn) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t i = 0; i < n; ++i) fn(i);
}

/// Deterministic parallel reduction: the range is split into a fixed number
/// of chunks whose partial sums are combined sequentially, so the result is
/// bitwise independent of the thread count.
template <typename F>
double parallel_sum(int64_t n, F&& term) {
    if (n <= 0) return 0.0;
    constexpr int64_t kChunks = 256;
    const int64_t nchunks = n < kChunks ? n : kChunks;
    const int64_t chunk = (n + nchunks - 1) / nchunks;
    std::vector<double> partial(static_cast<size_t>(nchunks), 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t c = 0; c < nchunks; ++c) {
        const int64_t lo = c * chunk;
        const int64_t hi = (lo + chunk < n) ? lo + chunk : n;
        double s = 0.0;
        for (int64_t i = lo; i < hi; ++i) s += term(i);
        partial[static_cast<size_t>(c)] = s;
    }
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

}  // namespace longct
