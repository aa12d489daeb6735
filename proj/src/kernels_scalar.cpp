#include "organ/kernels.hpp"

namespace organ::kernels {

namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv(const double* w, std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] += dot(w + r * cols, x, cols);
}

void gemv_t(const double* w, std::size_t rows, std::size_t cols, const double* g, double* x) {
  for (std::size_t r = 0; r < rows; ++r) axpy(g[r], w + r * cols, x, cols);
}

void ger(std::size_t rows, std::size_t cols, const double* g, const double* x, double* w) {
  for (std::size_t r = 0; r < rows; ++r) axpy(g[r], x, w + r * cols, cols);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] += dot(a + i * lda, b + j * ldb, k);
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) axpy(a[i * lda + p], b + p * ldb, c + i * ldc, n);
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) axpy(a[p * lda + i], b + p * ldb, c + i * ldc, n);
  }
}

constexpr KernelTable kScalar{"scalar", dot, axpy, gemv, gemv_t, ger, gemm_nt, gemm_nn, gemm_tn};

}  // namespace

const KernelTable& scalar_kernels() { return kScalar; }

}  // namespace organ::kernels
