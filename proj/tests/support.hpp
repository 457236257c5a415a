#pragma once

// Independent oracles and helpers for the unit tests. Nothing here calls the
// library code it is used to check.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "pcd/common.hpp"
#include "pcd/measures.hpp"

namespace testsupport {

using pcd::Matrix;
using pcd::Rng;
using pcd::Vector;

inline double euclid(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data) v = scale * (2.0 * pcd::uniform01(rng) - 1.0);
  return m;
}

inline pcd::EmpiricalDistribution random_cloud(Rng& rng, std::size_t n, std::size_t dim, bool weighted) {
  Matrix pts = random_matrix(rng, n, dim, 2.0);
  if (!weighted) return pcd::make_empirical(std::move(pts));
  Vector w(n);
  for (double& v : w) v = 0.05 + pcd::uniform01(rng);
  return pcd::make_empirical(std::move(pts), w);
}

// W_p between uniform clouds of equal size by enumerating every matching.
inline double wp_by_permutations(const Matrix& a, const Matrix& b, double p) {
  std::vector<std::size_t> perm(a.rows);
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i) s += std::pow(euclid(a.row(i), b.row(perm[i])), p);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::pow(best / static_cast<double>(a.rows), 1.0 / p);
}

// W_p on the line by merging the two quantile functions.
inline double wp_by_quantiles(std::vector<std::pair<double, double>> a, std::vector<std::pair<double, double>> b,
                              double p) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double ra = a[0].second, rb = b[0].second, total = 0.0;
  while (i < a.size() && j < b.size()) {
    const double m = std::min(ra, rb);
    total += m * std::pow(std::abs(a[i].first - b[j].first), p);
    ra -= m;
    rb -= m;
    if (ra <= 1e-15 && ++i < a.size()) ra = a[i].second;
    if (rb <= 1e-15 && ++j < b.size()) rb = b[j].second;
  }
  return std::pow(total, 1.0 / p);
}

// Singular values, largest first, by Jacobi eigenvalue iteration on W^T W.
inline std::vector<double> singular_values(const Matrix& w) {
  const std::size_t n = w.cols;
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t r = 0; r < w.rows; ++r) a[i * n + j] += w(r, i) * w(r, j);
    }
  }
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
    }
    if (off < 1e-30) break;
    for (std::size_t pi = 0; pi < n; ++pi) {
      for (std::size_t q = pi + 1; q < n; ++q) {
        const double apq = a[pi * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[pi * n + pi]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + pi], akq = a[k * n + q];
          a[k * n + pi] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[pi * n + k], aqk = a[q * n + k];
          a[pi * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::sqrt(std::max(0.0, a[i * n + i]));
  std::sort(out.rbegin(), out.rend());
  return out;
}

inline double top_singular_value(const Matrix& w) { return singular_values(w).front(); }

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

// Central difference of f with respect to x[k].
template <class F>
double central_diff(F&& f, double& x, double h = 1e-6) {
  const double keep = x;
  x = keep + h;
  const double up = f();
  x = keep - h;
  const double down = f();
  x = keep;
  return (up - down) / (2.0 * h);
}

}  // namespace testsupport
