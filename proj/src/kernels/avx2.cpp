#include "pcd/kernels.hpp"

#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
#define PCD_HAVE_AVX2_KERNELS 1
#include <immintrin.h>

#include <algorithm>
#include <vector>
#else
#define PCD_HAVE_AVX2_KERNELS 0
#endif

namespace pcd::kernels {

#if PCD_HAVE_AVX2_KERNELS
namespace {

#define PCD_AVX2 __attribute__((target("avx2,fma")))

PCD_AVX2 inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

PCD_AVX2 double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

PCD_AVX2 void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// All three products run through one packed 6x8 micro-kernel. Operands are
// read through (row stride, column stride) pairs, packed into zero-padded
// panels, and every C element is one FMA chain over k in increasing order
// regardless of where it sits in a tile.
constexpr std::size_t kMR = 6;
constexpr std::size_t kNR = 8;

struct Strided {
  const double* p;
  std::size_t rs;
  std::size_t cs;
  double operator()(std::size_t r, std::size_t c) const { return p[r * rs + c * cs]; }
};

std::vector<double>& pack_a_buffer() {
  thread_local std::vector<double> buf;
  return buf;
}

std::vector<double>& pack_b_buffer() {
  thread_local std::vector<double> buf;
  return buf;
}

// Panel-major: for panel q, k-major blocks of kMR (A) or kNR (B) values.
// Padding lanes are written as zeros explicitly so the buffers are never
// cleared as a whole.
void pack_a(Strided a, std::size_t m, std::size_t k, std::vector<double>& out) {
  const std::size_t panels = (m + kMR - 1) / kMR;
  out.resize(panels * kMR * k);
  double* dst = out.data();
  for (std::size_t q = 0; q < panels; ++q) {
    const std::size_t i0 = q * kMR;
    const std::size_t rows = std::min(kMR, m - i0);
    for (std::size_t kk = 0; kk < k; ++kk, dst += kMR) {
      for (std::size_t r = 0; r < rows; ++r) dst[r] = a(i0 + r, kk);
      for (std::size_t r = rows; r < kMR; ++r) dst[r] = 0.0;
    }
  }
}

void pack_b(Strided b, std::size_t k, std::size_t n, std::vector<double>& out) {
  const std::size_t panels = (n + kNR - 1) / kNR;
  out.resize(panels * kNR * k);
  double* dst = out.data();
  for (std::size_t q = 0; q < panels; ++q) {
    const std::size_t j0 = q * kNR;
    const std::size_t cols = std::min(kNR, n - j0);
    for (std::size_t kk = 0; kk < k; ++kk, dst += kNR) {
      if (b.cs == 1 && cols == kNR) {
        std::copy_n(b.p + kk * b.rs + j0, kNR, dst);
        continue;
      }
      for (std::size_t c = 0; c < cols; ++c) dst[c] = b(kk, j0 + c);
      for (std::size_t c = cols; c < kNR; ++c) dst[c] = 0.0;
    }
  }
}

// c (ldc) += Ap * Bp over k for one kMR x kNR tile.
PCD_AVX2 void micro_6x8(const double* ap, const double* bp, std::size_t k, double* c, std::size_t ldc) {
  __m256d c00 = _mm256_loadu_pd(c), c01 = _mm256_loadu_pd(c + 4);
  __m256d c10 = _mm256_loadu_pd(c + ldc), c11 = _mm256_loadu_pd(c + ldc + 4);
  __m256d c20 = _mm256_loadu_pd(c + 2 * ldc), c21 = _mm256_loadu_pd(c + 2 * ldc + 4);
  __m256d c30 = _mm256_loadu_pd(c + 3 * ldc), c31 = _mm256_loadu_pd(c + 3 * ldc + 4);
  __m256d c40 = _mm256_loadu_pd(c + 4 * ldc), c41 = _mm256_loadu_pd(c + 4 * ldc + 4);
  __m256d c50 = _mm256_loadu_pd(c + 5 * ldc), c51 = _mm256_loadu_pd(c + 5 * ldc + 4);
  for (std::size_t kk = 0; kk < k; ++kk, ap += kMR, bp += kNR) {
    const __m256d b0 = _mm256_loadu_pd(bp);
    const __m256d b1 = _mm256_loadu_pd(bp + 4);
    __m256d a = _mm256_broadcast_sd(ap);
    c00 = _mm256_fmadd_pd(a, b0, c00);
    c01 = _mm256_fmadd_pd(a, b1, c01);
    a = _mm256_broadcast_sd(ap + 1);
    c10 = _mm256_fmadd_pd(a, b0, c10);
    c11 = _mm256_fmadd_pd(a, b1, c11);
    a = _mm256_broadcast_sd(ap + 2);
    c20 = _mm256_fmadd_pd(a, b0, c20);
    c21 = _mm256_fmadd_pd(a, b1, c21);
    a = _mm256_broadcast_sd(ap + 3);
    c30 = _mm256_fmadd_pd(a, b0, c30);
    c31 = _mm256_fmadd_pd(a, b1, c31);
    a = _mm256_broadcast_sd(ap + 4);
    c40 = _mm256_fmadd_pd(a, b0, c40);
    c41 = _mm256_fmadd_pd(a, b1, c41);
    a = _mm256_broadcast_sd(ap + 5);
    c50 = _mm256_fmadd_pd(a, b0, c50);
    c51 = _mm256_fmadd_pd(a, b1, c51);
  }
  _mm256_storeu_pd(c, c00);
  _mm256_storeu_pd(c + 4, c01);
  _mm256_storeu_pd(c + ldc, c10);
  _mm256_storeu_pd(c + ldc + 4, c11);
  _mm256_storeu_pd(c + 2 * ldc, c20);
  _mm256_storeu_pd(c + 2 * ldc + 4, c21);
  _mm256_storeu_pd(c + 3 * ldc, c30);
  _mm256_storeu_pd(c + 3 * ldc + 4, c31);
  _mm256_storeu_pd(c + 4 * ldc, c40);
  _mm256_storeu_pd(c + 4 * ldc + 4, c41);
  _mm256_storeu_pd(c + 5 * ldc, c50);
  _mm256_storeu_pd(c + 5 * ldc + 4, c51);
}

// C[m x n] (row-major, ldc) += A[m x k] * B[k x n].
PCD_AVX2 void gemm_core(Strided a, Strided b, double* c, std::size_t ldc, std::size_t m, std::size_t n,
                        std::size_t k) {
  if (m == 0 || n == 0) return;
  auto& ap = pack_a_buffer();
  auto& bp = pack_b_buffer();
  pack_a(a, m, k, ap);
  pack_b(b, k, n, bp);
  alignas(32) double tile[kMR * kNR];
  for (std::size_t j0 = 0; j0 < n; j0 += kNR) {
    const std::size_t cols = std::min(kNR, n - j0);
    const double* bpanel = bp.data() + (j0 / kNR) * kNR * k;
    for (std::size_t i0 = 0; i0 < m; i0 += kMR) {
      const std::size_t rows = std::min(kMR, m - i0);
      const double* apanel = ap.data() + (i0 / kMR) * kMR * k;
      double* cij = c + i0 * ldc + j0;
      if (rows == kMR && cols == kNR) {
        micro_6x8(apanel, bpanel, k, cij, ldc);
        continue;
      }
      std::fill(std::begin(tile), std::end(tile), 0.0);
      for (std::size_t r = 0; r < rows; ++r) std::copy_n(cij + r * ldc, cols, tile + r * kNR);
      micro_6x8(apanel, bpanel, k, tile, kNR);
      for (std::size_t r = 0; r < rows; ++r) std::copy_n(tile + r * kNR, cols, cij + r * ldc);
    }
  }
}

PCD_AVX2 void gemm_abt_avx2(const double* a, const double* b, const double* bias, double* c,
                            std::size_t rows, std::size_t inner, std::size_t out) {
  std::fill_n(c, rows * out, 0.0);
  gemm_core({a, inner, 1}, {b, 1, inner}, c, out, rows, out, inner);
  if (bias) {
    for (std::size_t r = 0; r < rows; ++r) {
      double* cr = c + r * out;
      for (std::size_t k = 0; k < out; ++k) cr[k] += bias[k];
    }
  }
}

PCD_AVX2 void gemm_ab_acc_avx2(const double* a, const double* b, double* c, std::size_t rows,
                               std::size_t inner, std::size_t out) {
  gemm_core({a, inner, 1}, {b, out, 1}, c, out, rows, out, inner);
}

PCD_AVX2 void gemm_atb_acc_avx2(const double* a, const double* b, double* c, std::size_t rows,
                                std::size_t m, std::size_t n) {
  gemm_core({a, 1, m}, {b, n, 1}, c, n, m, n, rows);
}

#undef PCD_AVX2

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{"avx2",        dot_avx2,         axpy_avx2,
                                 gemm_abt_avx2, gemm_ab_acc_avx2, gemm_atb_acc_avx2};
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return &table;
  return nullptr;
}

#else

const KernelTable* avx2_table() { return nullptr; }

#endif

}  // namespace pcd::kernels
