#include <cstdlib>
#include <string>

#include "organ/kernels.hpp"

namespace organ::kernels {

#if defined(ORGAN_HAVE_AVX2)
namespace detail {
const KernelTable& avx2_table();
}
#endif

namespace {

bool cpu_has_avx2() {
#if defined(ORGAN_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  const char* env = std::getenv("ORGAN_KERNELS");
  if (env != nullptr && std::string(env) == "scalar") return &scalar_kernels();
  if (const KernelTable* simd = avx2_kernels()) return simd;
  return &scalar_kernels();
}

const KernelTable*& current() {
  static const KernelTable* table = initial_table();
  return table;
}

}  // namespace

const KernelTable* avx2_kernels() {
#if defined(ORGAN_HAVE_AVX2)
  static const bool supported = cpu_has_avx2();
  return supported ? &detail::avx2_table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() { return *current(); }

bool select(std::string_view name) {
  if (name == "scalar") {
    current() = &scalar_kernels();
    return true;
  }
  if (name == "avx2") {
    if (const KernelTable* simd = avx2_kernels()) {
      current() = simd;
      return true;
    }
    return false;
  }
  if (name == "auto") {
    const KernelTable* simd = avx2_kernels();
    current() = simd ? simd : &scalar_kernels();
    return true;
  }
  return false;
}

}  // namespace organ::kernels
