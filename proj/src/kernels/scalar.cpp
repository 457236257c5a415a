#include "pcd/kernels.hpp"

namespace pcd::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_abt_scalar(const double* a, const double* b, const double* bias, double* c,
                     std::size_t rows, std::size_t inner, std::size_t out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* ar = a + r * inner;
    double* cr = c + r * out;
    for (std::size_t o = 0; o < out; ++o) {
      cr[o] = dot_scalar(ar, b + o * inner, inner) + (bias ? bias[o] : 0.0);
    }
  }
}

void gemm_ab_acc_scalar(const double* a, const double* b, double* c, std::size_t rows,
                        std::size_t inner, std::size_t out) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* cr = c + r * out;
    for (std::size_t k = 0; k < inner; ++k) {
      axpy_scalar(a[r * inner + k], b + k * out, cr, out);
    }
  }
}

void gemm_atb_acc_scalar(const double* a, const double* b, double* c, std::size_t rows,
                         std::size_t m, std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* br = b + r * n;
    for (std::size_t i = 0; i < m; ++i) {
      axpy_scalar(a[r * m + i], br, c + i * n, n);
    }
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{"scalar",        dot_scalar,         axpy_scalar,
                                 gemm_abt_scalar, gemm_ab_acc_scalar, gemm_atb_acc_scalar};
  return table;
}

}  // namespace pcd::kernels
