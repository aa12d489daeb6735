#pragma once

// Dense inner loops used by the layers. Every entry has a portable scalar
// reference and, on x86-64, an AVX2/FMA variant selected at runtime. The two
// agree to rounding (different summation order), not bit-for-bit.

#include <cstddef>
#include <string_view>

namespace organ::kernels {

struct KernelTable {
  const char* name;

  /// sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  /// y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  /// y[r] += sum_c w[r*cols + c] * x[c]
  void (*gemv)(const double* w, std::size_t rows, std::size_t cols, const double* x, double* y);
  /// x[c] += sum_r w[r*cols + c] * g[r]
  void (*gemv_t)(const double* w, std::size_t rows, std::size_t cols, const double* g, double* x);
  /// w[r*cols + c] += g[r] * x[c]
  void (*ger)(std::size_t rows, std::size_t cols, const double* g, const double* x, double* w);
  /// c[i*ldc + j] += sum_k a[i*lda + k] * b[j*ldb + k]      (C += A B^T)
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
  /// c[i*ldc + j] += sum_k a[i*lda + k] * b[k*ldb + j]      (C += A B)
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
  /// c[i*ldc + j] += sum_k a[k*lda + i] * b[k*ldb + j]      (C += A^T B)
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
};

const KernelTable& scalar_kernels();

/// AVX2/FMA table, or nullptr when not compiled in or not supported by this CPU.
const KernelTable* avx2_kernels();

/// Table used by the layers. Chosen once: AVX2 when available unless the
/// ORGAN_KERNELS environment variable says "scalar".
const KernelTable& active();

/// Override the active table ("scalar", "avx2" or "auto"). Returns false if
/// the requested variant is unavailable.
bool select(std::string_view name);

}  // namespace organ::kernels
