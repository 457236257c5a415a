#include <doctest.h>

#include <cmath>

#include "pcd/kernels.hpp"
#include "support.hpp"

using namespace pcd;
namespace k = pcd::kernels;

namespace {

// Shapes around the 6x8 register tile and the 4-wide vector lanes.
const std::vector<std::size_t> kSizes{1, 2, 3, 4, 5, 6, 7, 8, 9, 13, 16, 17, 31, 64, 130};

Vector random_vec(Rng& rng, std::size_t n) {
  Vector v(n);
  for (double& x : v) x = 2.0 * uniform01(rng) - 1.0;
  return v;
}

void check_close(const Vector& got, const Vector& want, double tol) {
  REQUIRE(got.size() == want.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    worst = std::max(worst, std::abs(got[i] - want[i]) / std::max(1.0, std::abs(want[i])));
  }
  CHECK(worst <= tol);
}

std::vector<const k::KernelTable*> tables() {
  std::vector<const k::KernelTable*> t{&k::scalar_table()};
  if (const auto* avx = k::avx2_table()) t.push_back(avx);
  return t;
}

}  // namespace

TEST_CASE("active table is one of the known tables") {
  const auto& a = k::active();
  CHECK((&a == &k::scalar_table() || &a == k::avx2_table()));
  const std::string avx = k::avx2_table() ? "available" : "unavailable";
  MESSAGE("active kernels: " << std::string(a.name) << ", avx2 " << avx);
}

TEST_CASE("scalar kernels match plain loops exactly") {
  Rng rng(31);
  const auto& s = k::scalar_table();
  for (std::size_t n : kSizes) {
    const Vector a = random_vec(rng, n), b = random_vec(rng, n);
    double want = 0.0;
    for (std::size_t i = 0; i < n; ++i) want += a[i] * b[i];
    CHECK(std::abs(s.dot(a.data(), b.data(), n) - want) <= 1e-13 * static_cast<double>(n));
    Vector y = b;
    s.axpy(0.5, a.data(), y.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(y[i] == b[i] + 0.5 * a[i]);
  }
}

TEST_CASE("all kernel tables agree with a reference GEMM") {
  Rng rng(32);
  for (const auto* t : tables()) {
    CAPTURE(t->name);
    for (std::size_t rows : {1, 5, 6, 7, 12, 64}) {
      for (std::size_t inner : {1, 3, 8, 17, 128}) {
        for (std::size_t out : {1, 4, 8, 9, 16, 33}) {
          const Vector a = random_vec(rng, rows * inner), b = random_vec(rng, out * inner), bias = random_vec(rng, out);
          Vector want(rows * out);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t o = 0; o < out; ++o) {
              double v = bias[o];
              for (std::size_t i = 0; i < inner; ++i) v += a[r * inner + i] * b[o * inner + i];
              want[r * out + o] = v;
            }
          }
          Vector c(rows * out, 7.0);
          t->gemm_abt(a.data(), b.data(), bias.data(), c.data(), rows, inner, out);
          check_close(c, want, 1e-12);

          // C += A * B with B stored inner x out.
          const Vector bt = random_vec(rng, inner * out), c0 = random_vec(rng, rows * out);
          Vector acc = c0, want_acc = c0;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t o = 0; o < out; ++o) {
              for (std::size_t i = 0; i < inner; ++i) want_acc[r * out + o] += a[r * inner + i] * bt[i * out + o];
            }
          }
          t->gemm_ab_acc(a.data(), bt.data(), acc.data(), rows, inner, out);
          check_close(acc, want_acc, 1e-12);

          // C[inner x out] += A^T B with A rows x inner, B rows x out.
          const Vector bb = random_vec(rng, rows * out), c1 = random_vec(rng, inner * out);
          Vector acc2 = c1, want2 = c1;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t m = 0; m < inner; ++m) {
              for (std::size_t o = 0; o < out; ++o) want2[m * out + o] += a[r * inner + m] * bb[r * out + o];
            }
          }
          t->gemm_atb_acc(a.data(), bb.data(), acc2.data(), rows, inner, out);
          check_close(acc2, want2, 1e-12);
        }
      }
    }
  }
}

TEST_CASE("SIMD and scalar kernels are equivalent") {
  const auto* avx = k::avx2_table();
  if (avx == nullptr) {
    MESSAGE("AVX2 unavailable on this machine; equivalence not exercised");
    return;
  }
  const auto& s = k::scalar_table();
  Rng rng(33);
  for (std::size_t n : kSizes) {
    const Vector a = random_vec(rng, n), b = random_vec(rng, n);
    CHECK(std::abs(avx->dot(a.data(), b.data(), n) - s.dot(a.data(), b.data(), n)) <= 1e-13 * static_cast<double>(n));
    Vector y1 = b, y2 = b;
    avx->axpy(-1.25, a.data(), y1.data(), n);
    s.axpy(-1.25, a.data(), y2.data(), n);
    check_close(y1, y2, 1e-15);
  }
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t rows = kSizes[trial % kSizes.size()], inner = kSizes[(trial * 3) % kSizes.size()],
                      out = kSizes[(trial * 7) % kSizes.size()];
    const Vector a = random_vec(rng, rows * inner), b = random_vec(rng, out * inner);
    Vector c1(rows * out), c2(rows * out);
    avx->gemm_abt(a.data(), b.data(), nullptr, c1.data(), rows, inner, out);
    s.gemm_abt(a.data(), b.data(), nullptr, c2.data(), rows, inner, out);
    check_close(c1, c2, 1e-13);
  }
}

TEST_CASE("AVX2 GEMM entries do not depend on their tile position") {
  const auto* avx = k::avx2_table();
  if (avx == nullptr) return;
  // Row r of a 13-row product must equal the same row computed alone.
  Rng rng(34);
  const std::size_t rows = 13, inner = 37, out = 19;
  const Vector a = random_vec(rng, rows * inner), b = random_vec(rng, out * inner);
  Vector full(rows * out);
  avx->gemm_abt(a.data(), b.data(), nullptr, full.data(), rows, inner, out);
  for (std::size_t r = 0; r < rows; ++r) {
    Vector one(out);
    avx->gemm_abt(a.data() + r * inner, b.data(), nullptr, one.data(), 1, inner, out);
    for (std::size_t o = 0; o < out; ++o) CHECK(one[o] == full[r * out + o]);
  }
}
