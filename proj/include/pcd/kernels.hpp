#pragma once

// Dense double-precision kernels used by the network layers.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2+FMA variant. The active table is chosen once per process from the CPU
// feature bits; PCD_KERNELS=scalar in the environment forces the reference path.
// The two paths agree to rounding but not bit-for-bit (different summation
// order), so determinism guarantees hold per dispatch target.

#include <cstddef>
#include <string_view>

namespace pcd::kernels {

struct KernelTable {
  std::string_view name;

  double (*dot)(const double* a, const double* b, std::size_t n);

  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

  // C[rows x out] = A[rows x inner] * B[out x inner]^T (+ bias[out] if non-null)
  void (*gemm_abt)(const double* a, const double* b, const double* bias, double* c,
                   std::size_t rows, std::size_t inner, std::size_t out);

  // C[rows x out] += A[rows x inner] * B[inner x out]
  void (*gemm_ab_acc)(const double* a, const double* b, double* c, std::size_t rows,
                      std::size_t inner, std::size_t out);

  // C[m x n] += A[rows x m]^T * B[rows x n]
  void (*gemm_atb_acc)(const double* a, const double* b, double* c, std::size_t rows,
                       std::size_t m, std::size_t n);
};

const KernelTable& scalar_table();

// nullptr when the binary or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table();

// Process-wide table picked at first use.
const KernelTable& active();

inline double dot(const double* a, const double* b, std::size_t n) {
  return active().dot(a, b, n);
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active().axpy(alpha, x, y, n);
}

inline void gemm_abt(const double* a, const double* b, const double* bias, double* c,
                     std::size_t rows, std::size_t inner, std::size_t out) {
  active().gemm_abt(a, b, bias, c, rows, inner, out);
}

inline void gemm_ab_acc(const double* a, const double* b, double* c, std::size_t rows,
                        std::size_t inner, std::size_t out) {
  active().gemm_ab_acc(a, b, c, rows, inner, out);
}

inline void gemm_atb_acc(const double* a, const double* b, double* c, std::size_t rows,
                         std::size_t m, std::size_t n) {
  active().gemm_atb_acc(a, b, c, rows, m, n);
}

}  // namespace pcd::kernels
