#include <doctest.h>

#include <cmath>
#include <set>

#include "pcd/srvt.hpp"
#include "support.hpp"

using namespace pcd;

namespace {

// Direct evaluation of the transform and its inverse, written independently.
Vector forward_oracle(const Vector& x) {
  Vector y(x.size());
  double prev = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - prev;
    y[i] = (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) * std::sqrt(std::abs(d));
    prev = x[i];
  }
  return y;
}

Vector random_vector(Rng& rng, std::size_t n) {
  Vector v(n);
  for (double& x : v) x = 4.0 * uniform01(rng) - 2.0;
  return v;
}

}  // namespace

TEST_CASE("signed_sqrt examples") {
  CHECK(signed_sqrt(4.0) == 2.0);
  CHECK(signed_sqrt(-9.0) == -3.0);
  CHECK(signed_sqrt(0.0) == 0.0);
}

TEST_CASE("transform examples") {
  const Vector y = srvt_forward(Vector{1.0, 0.0, 2.0});
  CHECK(y[0] == 1.0);
  CHECK(y[1] == -1.0);
  CHECK(y[2] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(srvt_forward(Vector(5, 0.0)) == Vector(5, 0.0));
  CHECK(srvt_forward(Vector{-7.0}) == Vector{-std::sqrt(7.0)});

  const Vector x = srvt_inverse(Vector{1.0, -1.0, std::sqrt(2.0)});
  CHECK(x[0] == 1.0);
  CHECK(x[1] == 0.0);
  CHECK(x[2] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(srvt_inverse(Vector(3, 0.0)) == Vector(3, 0.0));

  CHECK(pullback_norm(Vector{1.0, 0.0, 2.0}) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(pullback_norm(Vector(4, 0.0)) == 0.0);
}

TEST_CASE("transform matches a direct evaluation") {
  Rng rng(51);
  for (std::size_t n : {1, 2, 16, 128}) {
    for (int i = 0; i < 20; ++i) {
      const Vector x = random_vector(rng, n);
      const Vector y = srvt_forward(x), want = forward_oracle(x);
      for (std::size_t k = 0; k < n; ++k) CHECK(y[k] == doctest::Approx(want[k]).epsilon(1e-15));
    }
  }
}

TEST_CASE("roundtrip and pullback identity") {
  Rng rng(52);
  for (std::size_t n : {1, 16, 128, 1024}) {
    double worst_roundtrip = 0.0, worst_norm = 0.0;
    for (int i = 0; i < 200; ++i) {
      const Vector x = random_vector(rng, n);
      const Vector back = srvt_inverse(srvt_forward(x));
      for (std::size_t k = 0; k < n; ++k) worst_roundtrip = std::max(worst_roundtrip, std::abs(back[k] - x[k]));
      worst_norm = std::max(worst_norm, std::abs(pullback_norm(x) - norm2(srvt_forward(x))));
    }
    CAPTURE(n);
    CHECK(worst_roundtrip <= 1e-9);
    CHECK(worst_norm <= 1e-12);
  }
}

TEST_CASE("SrvtBlock checks its dimension") {
  const SrvtBlock block{3};
  CHECK(block.inverse(block.forward(Vector{1.0, 2.0, 0.5}))[2] == doctest::Approx(0.5));
  CHECK_THROWS_AS(block.forward(Vector{1.0, 2.0}), Error);
}

TEST_CASE("graph signatures") {
  const auto one = graph_signature(1);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == NeuronSignature{1, 0});

  const auto three = graph_signature(3);
  CHECK(std::set<NeuronSignature>(three.begin(), three.end()) ==
        std::set<NeuronSignature>{{1, 0}, {2, 1}, {2, 2}});

  for (std::size_t n : {2, 5, 64, 1024}) {
    const auto sig = graph_signature(n);
    CHECK(sig.size() == n);
    CHECK(std::set<NeuronSignature>(sig.begin(), sig.end()).size() == n);
  }
}

TEST_CASE("no transposition preserves the pullback norm for every input") {
  Rng rng(53);
  std::vector<Vector> xs;
  for (int k = 0; k < 20; ++k) xs.push_back(random_vector(rng, 6));
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = i + 1; j < 6; ++j) {
      bool moved = false;
      for (const auto& x : xs) {
        Vector s = x;
        std::swap(s[i], s[j]);
        moved = moved || std::abs(pullback_norm(s) - pullback_norm(x)) > 1e-9;
      }
      CAPTURE(i);
      CAPTURE(j);
      CHECK(moved);
    }
  }
}

TEST_CASE("recorded transform: value and smoothed gradient") {
  Rng rng(54);
  Matrix x = testsupport::random_matrix(rng, 4, 6, 2.0);
  ad::Tape t;
  const ad::NodeId leaf = t.leaf(x, true);
  const ad::NodeId y = record_srvt(t, leaf);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const Vector want = srvt_forward(x.row(r));
    for (std::size_t k = 0; k < x.cols; ++k) CHECK(t.value(y)(r, k) == doctest::Approx(want[k]).epsilon(1e-14));
  }

  auto loss = [&] {
    ad::Tape u;
    return u.scalar_value(u.mean(u.row_norm(record_srvt(u, u.leaf(x, false), kSrvtEpsilon, ad::SqrtForward::kSmoothed))));
  };
  ad::Tape g;
  const ad::NodeId gl = g.leaf(x, true);
  g.backward(g.mean(g.row_norm(record_srvt(g, gl, kSrvtEpsilon, ad::SqrtForward::kSmoothed))));
  const Matrix analytic = g.adjoint(gl);
  double worst = 0.0;
  for (std::size_t k = 0; k < x.data.size(); ++k) {
    worst = std::max(worst, testsupport::rel_err(analytic.data[k], testsupport::central_diff(loss, x.data[k])));
  }
  CHECK(worst <= 1e-5);
}
