#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tokcode::kern {

// Dense row-major matmul kernels. Each output row is produced by exactly one
// worker call with a fixed inner accumulation order, so the parallel variants
// are bit-identical to the serial ones at any thread count.

inline bool parallel_worthwhile(long flops) {
#ifdef _OPENMP
    return flops >= (1 << 16) && omp_get_max_threads() > 1 && !omp_in_parallel();
#else
    (void)flops;
    return false;
#endif
}

// C[i,:] += or = A[i,:] * B for one row i.
template <class Real>
inline void mm_nn_row(const Real* __restrict__ a, const Real* __restrict__ b,
                      Real* __restrict__ c, int i, int k, int n, bool accumulate) {
    Real* crow = c + static_cast<size_t>(i) * n;
    if (!accumulate) {
        for (int j = 0; j < n; ++j) crow[j] = Real(0);
    }
    const Real* arow = a + static_cast<size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
        const Real aik = arow[kk];
        const Real* brow = b + static_cast<size_t>(kk) * n;
        for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
}

// C[m,n] = A[m,k] * B[k,n]
template <class Real>
void mm_nn_serial(const Real* a, const Real* b, Real* c, int m, int k, int n,
                  bool accumulate = false) {
    for (int i = 0; i < m; ++i) mm_nn_row(a, b, c, i, k, n, accumulate);
}

template <class Real>
void mm_nn(const Real* a, const Real* b, Real* c, int m, int k, int n,
           bool accumulate = false) {
    if (parallel_worthwhile(2L * m * k * n)) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < m; ++i) mm_nn_row(a, b, c, i, k, n, accumulate);
    } else {
        mm_nn_serial(a, b, c, m, k, n, accumulate);
    }
}

// C[i,:] for C[m,n] = A[m,k] * B[n,k]^T
template <class Real>
inline void mm_nt_row(const Real* __restrict__ a, const Real* __restrict__ b,
                      Real* __restrict__ c, int i, int k, int n, bool accumulate) {
    const Real* arow = a + static_cast<size_t>(i) * k;
    Real* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
        const Real* brow = b + static_cast<size_t>(j) * k;
        Real acc = Real(0);
        for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
        crow[j] = accumulate ? crow[j] + acc : acc;
    }
}

template <class Real>
void mm_nt_serial(const Real* a, const Real* b, Real* c, int m, int k, int n,
                  bool accumulate = false) {
    for (int i = 0; i < m; ++i) mm_nt_row(a, b, c, i, k, n, accumulate);
}

template <class Real>
void mm_nt(const Real* a, const Real* b, Real* c, int m, int k, int n,
           bool accumulate = false) {
    if (parallel_worthwhile(2L * m * k * n)) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < m; ++i) mm_nt_row(a, b, c, i, k, n, accumulate);
    } else {
        mm_nt_serial(a, b, c, m, k, n, accumulate);
    }
}

// C[i,:] for C[m,n] = A[k,m]^T * B[k,n]
template <class Real>
inline void mm_tn_row(const Real* __restrict__ a, const Real* __restrict__ b,
                      Real* __restrict__ c, int i, int k, int m, int n, bool accumulate) {
    Real* crow = c + static_cast<size_t>(i) * n;
    if (!accumulate) {
        for (int j = 0; j < n; ++j) crow[j] = Real(0);
    }
    for (int kk = 0; kk < k; ++kk) {
        const Real aki = a[static_cast<size_t>(kk) * m + i];
        const Real* brow = b + static_cast<size_t>(kk) * n;
        for (int j = 0; j < n; ++j) crow[j] += aki * brow[j];
    }
}

template <class Real>
void mm_tn_serial(const Real* a, const Real* b, Real* c, int m, int k, int n,
                  bool accumulate = false) {
    for (int i = 0; i < m; ++i) mm_tn_row(a, b, c, i, k, m, n, accumulate);
}

template <class Real>
void mm_tn(const Real* a, const Real* b, Real* c, int m, int k, int n,
           bool accumulate = false) {
    if (parallel_worthwhile(2L * m * k * n)) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < m; ++i) mm_tn_row(a, b, c, i, k, m, n, accumulate);
    } else {
        mm_tn_serial(a, b, c, m, k, n, accumulate);
    }
}

}  // namespace tokcode::kern
