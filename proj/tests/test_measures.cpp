#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "pcd/format.hpp"
#include "pcd/measures.hpp"
#include "pcd/transport.hpp"
#include "support.hpp"

using namespace pcd;
using testsupport::random_cloud;

TEST_CASE("make_empirical defaults and renormalizes weights") {
  const auto a = make_empirical(std::vector<Vector>{{0.0}, {2.0}});
  CHECK(a.weights() == Vector{0.5, 0.5});
  CHECK(a.uniform());

  const auto b = make_empirical(std::vector<Vector>{{1.0, 1.0}});
  CHECK(b.size() == 1);
  CHECK(b.dim() == 2);
  CHECK(b.weight(0) == 1.0);

  const auto c = make_empirical(std::vector<Vector>{{0.0}, {1.0}}, Vector{2.0, 2.0});
  CHECK(c.weights() == Vector{0.5, 0.5});
}

TEST_CASE("make_empirical rejects bad input") {
  CHECK_THROWS_AS(make_empirical(std::vector<Vector>{}), Error);
  CHECK_THROWS_AS(make_empirical(std::vector<Vector>{{0.0}, {1.0, 2.0}}), Error);
  CHECK_THROWS_AS(make_empirical(std::vector<Vector>{{0.0}, {1.0}}, Vector{1.0, -1.0}), Error);
  CHECK_THROWS_AS(make_empirical(std::vector<Vector>{{0.0}, {1.0}}, Vector{0.0, 0.0}), Error);
  CHECK_THROWS_AS(make_empirical(std::vector<Vector>{{0.0}, {1.0}}, Vector{1.0}), Error);
}

TEST_CASE("dirac is a single unit mass") {
  for (const Vector& x : {Vector{3.0}, Vector{0.0, 0.0}, Vector{1.0, 2.0, 3.0}}) {
    const auto d = dirac(x);
    REQUIRE(d.size() == 1);
    CHECK(Vector(d.point(0).begin(), d.point(0).end()) == x);
    CHECK(d.weight(0) == 1.0);
  }
}

TEST_CASE("p_centrality examples") {
  CHECK(p_centrality(dirac(Vector{3.0}), Vector{0.0}, 2.0) == doctest::Approx(3.0).epsilon(1e-15));
  const auto two = make_empirical(std::vector<Vector>{{0.0}, {2.0}});
  CHECK(p_centrality(two, Vector{1.0}, 2.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p_centrality(two, Vector{0.0}, 2.0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(p_centrality(two, Vector{0.0}, 0.5), Error);
  CHECK_THROWS_AS(p_centrality(two, Vector{0.0, 1.0}, 1.0), Error);
}

TEST_CASE("pushforward examples") {
  const auto P = make_empirical(std::vector<Vector>{{0.0}, {2.0}});
  const auto same = pushforward(P, [](std::span<const double> y) { return Vector(y.begin(), y.end()); });
  CHECK(same.points() == P.points());
  const auto doubled = pushforward(P, [](std::span<const double> y) { return Vector{2.0 * y[0]}; });
  CHECK(doubled.points() == Matrix::from_rows({{0.0}, {4.0}}));
  const auto collapsed = pushforward(P, [](std::span<const double>) { return Vector{0.0}; });
  CHECK(collapsed.size() == 2);
  CHECK(wasserstein_exact(collapsed, dirac(Vector{0.0}), 1.0).distance == 0.0);
}

TEST_CASE("p-centrality equals W_p to the Dirac at the base point") {
  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    const std::size_t dim = 1 + i % 3;
    const auto P = random_cloud(rng, 1 + i % 12, dim, i % 2 == 0);
    const auto x = testsupport::random_matrix(rng, 1, dim, 3.0);
    const double p = 1.0 + 0.5 * (i % 5);
    const double direct = p_centrality(P, x.row(0), p);
    CHECK(std::abs(direct - wasserstein_exact(P, dirac(x.row(0)), p).distance) <= 1e-9);
  }
}

TEST_CASE("centrality sandwich and Lipschitz properties") {
  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    const std::size_t dim = 1 + i % 3;
    const auto P = random_cloud(rng, 1 + i % 9, dim, true);
    const auto Q = random_cloud(rng, 1 + (i * 7) % 9, dim, false);
    const auto xy = testsupport::random_matrix(rng, 2, dim, 3.0);
    const double p = 1.0 + 0.25 * (i % 9);
    const double sp = p_centrality(P, xy.row(0), p), sq = p_centrality(Q, xy.row(0), p);
    const double w = wasserstein_exact(P, Q, p).distance;
    CHECK(std::abs(sp - sq) <= w + 1e-9);
    CHECK(w <= sp + sq + 1e-9);
    // 1-Lipschitz in the base point and nondecreasing in p.
    CHECK(std::abs(sp - p_centrality(P, xy.row(1), p)) <= testsupport::euclid(xy.row(0), xy.row(1)) + 1e-12);
    CHECK(p_centrality(P, xy.row(0), p + 0.5) >= sp - 1e-12);
  }
}

TEST_CASE("sample CSV roundtrip is exact") {
  Rng rng(13);
  const auto P = random_cloud(rng, 17, 3, true);
  const auto path = (std::filesystem::temp_directory_path() / "pcd_test_samples.csv").string();
  write_samples_csv(path, P, true);
  const auto back = read_samples_csv(path);
  CHECK(back.points() == P.points());
  for (std::size_t i = 0; i < P.size(); ++i) CHECK(std::abs(back.weight(i) - P.weight(i)) <= 1e-15);
  write_samples_csv(path, P, false);
  CHECK(read_samples_csv(path).uniform());
  std::filesystem::remove(path);
}

TEST_CASE("sample CSV parsing errors") {
  CHECK_THROWS_AS(parse_samples_csv(""), Error);
  CHECK_THROWS_AS(parse_samples_csv("x1,x2\n1,2\n3\n"), Error);
  CHECK_THROWS_AS(parse_samples_csv("x1\nabc\n"), Error);
  CHECK_THROWS_AS(parse_samples_csv("x1,weight\n1,-1\n"), Error);
  CHECK(parse_samples_csv("x1,x2\n1,2\n3,4\n").size() == 2);
}

TEST_CASE("format_exact roundtrips doubles") {
  Rng rng(14);
  for (int i = 0; i < 1000; ++i) {
    const double v = std::ldexp(testsupport::random_matrix(rng, 1, 1).data[0], static_cast<int>(i % 80) - 40);
    CHECK(std::stod(format_exact(v)) == v);
  }
}
