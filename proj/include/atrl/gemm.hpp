#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace atrl {

// Accumulating matrix kernels, all row-major, all C += A*B style. Every C
// element is built in strictly increasing-k order no matter how the loops are
// blocked or how many threads run (threads split rows of C, never a
// reduction), so results are bit-identical across runs and thread counts.

namespace detail {

// one row: c[0..n) += aik * b[0..n)
inline void axpy_row(std::size_t n, double aik, const double* b, double* c) {
  for (std::size_t j = 0; j < n; ++j) c[j] += aik * b[j];
}

inline void gemm_rows(std::size_t i0, std::size_t i1, std::size_t k,
                      std::size_t n, const double* a, const double* b,
                      double* c) {
  std::size_t i = i0;
  // four C rows per B sweep: cuts B traffic 4x without touching the
  // per-element accumulation order
  for (; i + 4 <= i1; i += 4) {
    const double* a0 = a + i * k;
    double* c0 = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double w0 = a0[kk];
      const double w1 = a0[k + kk];
      const double w2 = a0[2 * k + kk];
      const double w3 = a0[3 * k + kk];
      const double* bk = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double bj = bk[j];
        c0[j] += w0 * bj;
        c0[n + j] += w1 * bj;
        c0[2 * n + j] += w2 * bj;
        c0[3 * n + j] += w3 * bj;
      }
    }
  }
  for (; i < i1; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      axpy_row(n, ai[kk], b + kk * n, ci);
    }
  }
}

}  // namespace detail

// C[m,n] += A[m,k] * B[k,n]
inline void gemm_acc(std::size_t m, std::size_t k, std::size_t n,
                     const double* a, const double* b, double* c) {
#ifdef _OPENMP
  if (m >= 8 && m * k * n >= (std::size_t{1} << 16)) {
    const int threads = omp_get_max_threads();
    if (threads > 1) {
#pragma omp parallel
      {
        const int t = omp_get_thread_num();
        const int nt = omp_get_num_threads();
        const std::size_t chunk = (m + nt - 1) / nt;
        const std::size_t i0 = t * chunk;
        const std::size_t i1 = i0 + chunk < m ? i0 + chunk : m;
        if (i0 < i1) detail::gemm_rows(i0, i1, k, n, a, b, c);
      }
      return;
    }
  }
#endif
  detail::gemm_rows(0, m, k, n, a, b, c);
}

// C[m,p] += A[m,n] * B^T where B is [p,n]  (dot form, fixed inner order)
inline void gemm_acc_nt(std::size_t m, std::size_t n, std::size_t p,
                        const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    double* ci = c + i * p;
    for (std::size_t jp = 0; jp < p; ++jp) {
      const double* bj = b + jp * n;
      double acc = 0.0;
      for (std::size_t l = 0; l < n; ++l) acc += ai[l] * bj[l];
      ci[jp] += acc;
    }
  }
}

// C[k,n] += A^T * G where A is [m,k], G is [m,n]  (AXPY form, m outer)
inline void gemm_acc_tn(std::size_t m, std::size_t k, std::size_t n,
                        const double* a, const double* g, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      detail::axpy_row(n, ai[kk], gi, c + kk * n);
    }
  }
}

}  // namespace atrl
