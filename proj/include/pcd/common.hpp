#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pcd {

/// Raised for every contract violation in the library (bad shapes, bad
/// arguments, malformed files).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vector = std::vector<double>;

/// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  static Matrix from_rows(const std::vector<Vector>& rows);
  static Matrix identity(std::size_t n);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool operator==(const Matrix&) const = default;
};

double norm2(std::span<const double> x);
double distance(std::span<const double> a, std::span<const double> b);

/// Deterministic seed splitting: one 64-bit stream id per component, mixed with
/// the user seed through splitmix64 so streams never share state.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

using Rng = std::mt19937_64;

/// Standard normal draw by Box-Muller on the raw engine output, so the stream is
/// identical across standard library implementations.
double gaussian(Rng& rng);
double uniform01(Rng& rng);
std::size_t uniform_index(Rng& rng, std::size_t n);

/// Keeps network-sized buffers (>= 128 KiB) on the heap instead of fresh
/// mmap()s with page faults on every tape. Idempotent; no-op outside glibc.
void tune_allocator();

}  // namespace pcd
