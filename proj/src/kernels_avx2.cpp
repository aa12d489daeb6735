// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.

#include <immintrin.h>

#include "organ/kernels.hpp"

namespace organ::kernels::detail {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d high = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, high));
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  __m256d s2 = _mm256_setzero_pd();
  __m256d s3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
    s2 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 8), _mm256_loadu_pd(b + i + 8), s2);
    s3 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 12), _mm256_loadu_pd(b + i + 12), s3);
  }
  for (; i + 4 <= n; i += 4) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
  }
  double s = hsum(_mm256_add_pd(_mm256_add_pd(s0, s1), _mm256_add_pd(s2, s3)));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    _mm256_storeu_pd(y + i + 4,
                     _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
  }
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// y[i] += sum_p coef[p] * rows[p][i] for four rows at once.
inline void axpy4(const double* coef, const double* r0, const double* r1, const double* r2,
                  const double* r3, double* y, std::size_t n) {
  const __m256d c0 = _mm256_set1_pd(coef[0]);
  const __m256d c1 = _mm256_set1_pd(coef[1]);
  const __m256d c2 = _mm256_set1_pd(coef[2]);
  const __m256d c3 = _mm256_set1_pd(coef[3]);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d acc = _mm256_loadu_pd(y + i);
    acc = _mm256_fmadd_pd(c0, _mm256_loadu_pd(r0 + i), acc);
    acc = _mm256_fmadd_pd(c1, _mm256_loadu_pd(r1 + i), acc);
    acc = _mm256_fmadd_pd(c2, _mm256_loadu_pd(r2 + i), acc);
    acc = _mm256_fmadd_pd(c3, _mm256_loadu_pd(r3 + i), acc);
    _mm256_storeu_pd(y + i, acc);
  }
  for (; i < n; ++i) {
    y[i] += coef[0] * r0[i] + coef[1] * r1[i] + coef[2] * r2[i] + coef[3] * r3[i];
  }
}

// Four dot products of rows r0..r3 against x.
inline void dot4(const double* r0, const double* r1, const double* r2, const double* r3,
                 const double* x, std::size_t n, double* out) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  __m256d s2 = _mm256_setzero_pd();
  __m256d s3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xv = _mm256_loadu_pd(x + i);
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(r0 + i), xv, s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(r1 + i), xv, s1);
    s2 = _mm256_fmadd_pd(_mm256_loadu_pd(r2 + i), xv, s2);
    s3 = _mm256_fmadd_pd(_mm256_loadu_pd(r3 + i), xv, s3);
  }
  double t0 = hsum(s0), t1 = hsum(s1), t2 = hsum(s2), t3 = hsum(s3);
  for (; i < n; ++i) {
    t0 += r0[i] * x[i];
    t1 += r1[i] * x[i];
    t2 += r2[i] * x[i];
    t3 += r3[i] * x[i];
  }
  out[0] += t0;
  out[1] += t1;
  out[2] += t2;
  out[3] += t3;
}

void gemv(const double* w, std::size_t rows, std::size_t cols, const double* x, double* y) {
  std::size_t r = 0;
  for (; r + 4 <= rows; r += 4) {
    const double* base = w + r * cols;
    dot4(base, base + cols, base + 2 * cols, base + 3 * cols, x, cols, y + r);
  }
  for (; r < rows; ++r) y[r] += dot(w + r * cols, x, cols);
}

void gemv_t(const double* w, std::size_t rows, std::size_t cols, const double* g, double* x) {
  std::size_t r = 0;
  for (; r + 4 <= rows; r += 4) {
    const double* base = w + r * cols;
    axpy4(g + r, base, base + cols, base + 2 * cols, base + 3 * cols, x, cols);
  }
  for (; r < rows; ++r) axpy(g[r], w + r * cols, x, cols);
}

void ger(std::size_t rows, std::size_t cols, const double* g, const double* x, double* w) {
  for (std::size_t r = 0; r < rows; ++r) axpy(g[r], x, w + r * cols, cols);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * lda;
    double* crow = c + i * ldc;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* bj = b + j * ldb;
      dot4(bj, bj + ldb, bj + 2 * ldb, bj + 3 * ldb, arow, k, crow + j);
    }
    for (; j < n; ++j) crow[j] += dot(arow, b + j * ldb, k);
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * lda;
    double* crow = c + i * ldc;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const double* bp = b + p * ldb;
      axpy4(arow + p, bp, bp + ldb, bp + 2 * ldb, bp + 3 * ldb, crow, n);
    }
    for (; p < k; ++p) axpy(arow[p], b + p * ldb, crow, n);
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const double coef[4] = {a[p * lda + i], a[(p + 1) * lda + i], a[(p + 2) * lda + i],
                              a[(p + 3) * lda + i]};
      const double* bp = b + p * ldb;
      axpy4(coef, bp, bp + ldb, bp + 2 * ldb, bp + 3 * ldb, crow, n);
    }
    for (; p < k; ++p) axpy(a[p * lda + i], b + p * ldb, crow, n);
  }
}

constexpr KernelTable kAvx2{"avx2", dot, axpy, gemv, gemv_t, ger, gemm_nt, gemm_nn, gemm_tn};

}  // namespace

const KernelTable& avx2_table() { return kAvx2; }

}  // namespace organ::kernels::detail
