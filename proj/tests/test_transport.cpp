#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pcd/transport.hpp"
#include "support.hpp"

using namespace pcd;
using testsupport::random_cloud;

namespace {

EmpiricalDistribution line(std::vector<double> xs) {
  std::vector<Vector> rows;
  for (double x : xs) rows.push_back({x});
  return make_empirical(rows);
}

}  // namespace

TEST_CASE("wasserstein examples") {
  CHECK(wasserstein_exact(dirac(Vector{0.0}), dirac(Vector{1.0}), 1.0).distance == doctest::Approx(1.0));
  CHECK(wasserstein_exact(line({0, 2}), line({1, 3}), 1.0).distance == doctest::Approx(1.0));
  CHECK(wasserstein_exact(line({0, 1}), line({0, 1}), 2.0).distance == 0.0);
  CHECK(wasserstein_bruteforce(line({0, 2}), line({1, 3}), 1.0) == doctest::Approx(1.0));
  CHECK(wasserstein_1d(line({0, 2}), line({1, 3}), 1.0) == doctest::Approx(1.0));
}

TEST_CASE("identical inputs are at distance zero") {
  Rng rng(21);
  for (int i = 0; i < 20; ++i) {
    const auto P = random_cloud(rng, 1 + i, 1 + i % 3, i % 2 == 0);
    CHECK(wasserstein_exact(P, P, 1.0 + 0.5 * (i % 4)).distance == 0.0);
  }
}

TEST_CASE("min-cost flow matches permutation enumeration") {
  Rng rng(22);
  for (int i = 0; i < 60; ++i) {
    const std::size_t n = 1 + i % 7, dim = 1 + i % 3;
    const auto P = random_cloud(rng, n, dim, false), Q = random_cloud(rng, n, dim, false);
    const double p = 1.0 + 0.5 * (i % 5);
    const double oracle = testsupport::wp_by_permutations(P.points(), Q.points(), p);
    CHECK(std::abs(wasserstein_exact(P, Q, p).distance - oracle) <= 1e-9);
    CHECK(std::abs(wasserstein_bruteforce(P, Q, p) - oracle) <= 1e-9);
  }
}

TEST_CASE("min-cost flow matches the quantile formula on the line") {
  Rng rng(23);
  for (int i = 0; i < 60; ++i) {
    const auto P = random_cloud(rng, 1 + i % 13, 1, i % 2 == 0), Q = random_cloud(rng, 1 + (i * 5) % 11, 1, i % 3 == 0);
    std::vector<std::pair<double, double>> a, b;
    for (std::size_t k = 0; k < P.size(); ++k) a.emplace_back(P.point(k)[0], P.weight(k));
    for (std::size_t k = 0; k < Q.size(); ++k) b.emplace_back(Q.point(k)[0], Q.weight(k));
    const double p = 1.0 + 0.5 * (i % 4);
    const double oracle = testsupport::wp_by_quantiles(a, b, p);
    CHECK(std::abs(wasserstein_exact(P, Q, p).distance - oracle) <= 1e-9);
    CHECK(std::abs(wasserstein_1d(P, Q, p) - oracle) <= 1e-9);
  }
}

TEST_CASE("ring rotated by a small angle") {
  std::vector<Vector> a, b;
  for (int k = 0; k < 8; ++k) {
    const double t = 2.0 * std::numbers::pi * k / 8.0;
    a.push_back({std::cos(t), std::sin(t)});
    b.push_back({std::cos(t + 0.05), std::sin(t + 0.05)});
  }
  const auto P = make_empirical(a), Q = make_empirical(b);
  CHECK(std::abs(wasserstein_exact(P, Q, 2.0).distance - wasserstein_bruteforce(P, Q, 2.0)) <= 1e-9);
  CHECK(wasserstein_exact(P, Q, 1.0).distance == doctest::Approx(2.0 * std::sin(0.025)).epsilon(1e-12));
}

TEST_CASE("optimal plan has the prescribed marginals") {
  Rng rng(24);
  for (int i = 0; i < 20; ++i) {
    const auto P = random_cloud(rng, 1 + i % 9, 2, true), Q = random_cloud(rng, 1 + (i * 3) % 10, 2, true);
    const double p = 1.0 + 0.5 * (i % 3);
    const auto t = wasserstein_exact(P, Q, p);
    double cost = 0.0;
    for (std::size_t r = 0; r < P.size(); ++r) {
      double row = 0.0;
      for (std::size_t c = 0; c < Q.size(); ++c) {
        CHECK(t.plan.mass(r, c) >= 0.0);
        row += t.plan.mass(r, c);
        cost += t.plan.mass(r, c) * std::pow(testsupport::euclid(P.point(r), Q.point(c)), p);
      }
      CHECK(std::abs(row - P.weight(r)) <= 1e-12);
    }
    for (std::size_t c = 0; c < Q.size(); ++c) {
      double col = 0.0;
      for (std::size_t r = 0; r < P.size(); ++r) col += t.plan.mass(r, c);
      CHECK(std::abs(col - Q.weight(c)) <= 1e-12);
    }
    CHECK(std::abs(std::pow(cost, 1.0 / p) - t.distance) <= 1e-9);
  }
}

TEST_CASE("W_p is a metric") {
  Rng rng(25);
  for (int i = 0; i < 20; ++i) {
    const auto A = random_cloud(rng, 3 + i % 5, 2, true), B = random_cloud(rng, 4, 2, false),
               C = random_cloud(rng, 2 + i % 6, 2, true);
    const double p = 1.0 + 0.5 * (i % 3);
    const double ab = wasserstein_exact(A, B, p).distance, ba = wasserstein_exact(B, A, p).distance;
    CHECK(std::abs(ab - ba) <= 1e-12);
    CHECK(ab <= wasserstein_exact(A, C, p).distance + wasserstein_exact(C, B, p).distance + 1e-9);
  }
}

TEST_CASE("transport argument errors") {
  Rng rng(26);
  const auto big = random_cloud(rng, 101, 1, false);
  CHECK_THROWS_AS(wasserstein_exact(big, big, 1.0), Error);  // 101 * 101 > 10000
  const auto ok = random_cloud(rng, 100, 1, false);
  CHECK_NOTHROW(wasserstein_exact(ok, ok, 1.0));
  CHECK_THROWS_AS(wasserstein_exact(ok, random_cloud(rng, 3, 2, false), 1.0), Error);
  CHECK_THROWS_AS(wasserstein_exact(ok, ok, 0.9), Error);
  CHECK_THROWS_AS(wasserstein_bruteforce(random_cloud(rng, 9, 1, false), random_cloud(rng, 9, 1, false), 1.0), Error);
  CHECK_THROWS_AS(wasserstein_bruteforce(random_cloud(rng, 3, 1, true), random_cloud(rng, 3, 1, false), 1.0), Error);
  CHECK_THROWS_AS(wasserstein_1d(random_cloud(rng, 3, 2, false), random_cloud(rng, 3, 2, false), 1.0), Error);
}
