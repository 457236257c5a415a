#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "pcd/discrepancy.hpp"
#include "pcd/transport.hpp"
#include "support.hpp"

using namespace pcd;
using testsupport::random_cloud;
using testsupport::random_matrix;

namespace {

CriticNetwork identity_critic(double K) {
  CriticNetwork c;
  c.body.spectral = true;
  c.body.layers.push_back({Matrix(1, 1, 1.0), Vector{0.0}, ad::Activation::kIdentity, Vector{1.0}});
  c.K = K;
  return c;
}

EmpiricalDistribution line(std::initializer_list<double> xs) {
  std::vector<Vector> rows;
  for (double x : xs) rows.push_back({x});
  return make_empirical(rows);
}

}  // namespace

TEST_CASE("objective examples") {
  Rng rng(61);
  CriticNetwork zero = make_critic(2, 3, 1.0, false, {8}, rng);
  for (auto& l : zero.body.layers) {
    std::fill(l.weight.data.begin(), l.weight.data.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
  const auto P = random_cloud(rng, 5, 2, false), Q = random_cloud(rng, 7, 2, true);
  CHECK(critic_objective(zero, P, Q, 1.5) == 0.0);

  const CriticNetwork c = make_critic(2, 3, 1.0, true, {8}, rng);
  CHECK(critic_objective(c, P, P, 2.0) == 0.0);

  CHECK(critic_objective(identity_critic(1.0), line({2.0}), line({1.0}), 1.0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("fixed critics never exceed K W_p") {
  Rng rng(62);
  for (int i = 0; i < 30; ++i) {
    const std::size_t dim = 1 + i % 3, n = 1 + i % 4;
    const double K = 0.5 + 0.5 * (i % 4), p = 1.0 + 0.5 * (i % 3);
    const CriticNetwork c = make_critic(dim, n, K, false, {16, 16}, rng);
    const auto P = random_cloud(rng, 3 + i % 9, dim, i % 2 == 0), Q = random_cloud(rng, 2 + i % 7, dim, false);
    CHECK(critic_objective(c, P, Q, p) <= K * wasserstein_exact(P, Q, p).distance + 1e-9);
  }
}

TEST_CASE("K scales the objective linearly") {
  Rng rng(63);
  for (int i = 0; i < 10; ++i) {
    CriticNetwork c = make_critic(2, 4, 1.0, false, {16}, rng);
    const auto P = random_cloud(rng, 6, 2, false), Q = random_cloud(rng, 5, 2, false);
    const double base = critic_objective(c, P, Q, 1.0 + 0.5 * (i % 3));
    c.K = 3.0;
    CHECK(std::abs(critic_objective(c, P, Q, 1.0 + 0.5 * (i % 3)) - 3.0 * base) <= 1e-12 * std::max(1.0, std::abs(base)));
  }
}

TEST_CASE("certified critics are K-Lipschitz") {
  Rng rng(64);
  const CriticNetwork c = make_critic(3, 5, 2.0, false, {32, 32}, rng);
  for (const auto& e : ad::exact_spectral_estimates(c.body)) CHECK(e.sigma > 0.0);
  const Matrix x = random_matrix(rng, 4000, 3, 2.0);
  const Matrix y = critic_apply(c, x);
  double worst = 0.0;
  for (std::size_t r = 0; r + 1 < x.rows; r += 2) {
    worst = std::max(worst, distance(y.row(r), y.row(r + 1)) / distance(x.row(r), x.row(r + 1)));
  }
  CHECK(worst <= 2.0 + 1e-9);
}

TEST_CASE("base point independence") {
  Rng rng(65);
  for (int i = 0; i < 20; ++i) {
    const CriticNetwork c = make_critic(2, 3, 1.0, i % 4 == 0, {8, 8}, rng);
    const auto P = random_cloud(rng, 6, 2, true), Q = random_cloud(rng, 4, 2, false);
    const Matrix x0 = random_matrix(rng, 1, 3, 2.0);
    const auto [at_x0, shifted] = base_point_check(c, P, Q, 1.0 + 0.5 * (i % 3), x0.row(0));
    CHECK(std::abs(at_x0 - shifted) <= 1e-12);
    const auto [a, b] = base_point_check(c, P, Q, 2.0, Vector(3, 0.0));
    CHECK(a == b);
  }
  CHECK_THROWS_AS(base_point_check(make_critic(2, 3, 1.0, false, {4}, rng), random_cloud(rng, 2, 2, false),
                                   random_cloud(rng, 2, 2, false), 1.0, Vector(2, 0.0)),
                  Error);
}

TEST_CASE("zero padding embeds the critic") {
  Rng rng(66);
  for (int i = 0; i < 10; ++i) {
    const CriticNetwork c = make_critic(2, 1 + i % 3, 1.5, false, {16, 16}, rng);
    const CriticNetwork padded = embed_zero_pad(c, 16);
    CHECK(padded.out_dim() == 16);
    const auto P = random_cloud(rng, 8, 2, false), Q = random_cloud(rng, 6, 2, true);
    CHECK(std::abs(critic_objective(padded, P, Q, 1.5) - critic_objective(c, P, Q, 1.5)) <= 1e-12);
    const auto s0 = ad::exact_spectral_estimates(c.body), s1 = ad::exact_spectral_estimates(padded.body);
    for (std::size_t l = 0; l < s0.size(); ++l) CHECK(std::abs(s0[l].sigma - s1[l].sigma) <= 1e-12);
  }
  CHECK_THROWS_AS(embed_zero_pad(make_critic(2, 4, 1.0, false, {4}, rng), 4), Error);
  CHECK_THROWS_AS(embed_zero_pad(make_critic(2, 4, 1.0, true, {4}, rng), 8), Error);
}

TEST_CASE("R1 penalty: value and double-backward gradient") {
  Rng rng(67);
  CriticNetwork c = make_critic(2, 3, 1.0, false, {6, 6}, rng);
  const auto norm = ad::exact_spectral_estimates(c.body);
  Matrix x = random_matrix(rng, 4, 2, 1.5);
  const Batch xs{x, {}}, ys{random_matrix(rng, 3, 2, 1.5), {}};
  const Vector w(4, 0.25);

  // Penalty value against the mean squared norm of a finite-difference input gradient.
  auto norm_at = [&](const Matrix& pts, std::size_t r) {
    return norm2(critic_apply(c, Matrix::from_rows({Vector(pts.row(r).begin(), pts.row(r).end())})).row(0));
  };
  double want = 0.0;
  for (std::size_t r = 0; r < 4; ++r) {
    double g2 = 0.0;
    for (std::size_t j = 0; j < 2; ++j) {
      Matrix pts = x;
      const double d = testsupport::central_diff([&] { return norm_at(pts, r); }, pts(r, j));
      g2 += d * d;
    }
    want += 0.25 * g2;
  }
  auto penalty = [&] {
    ObjectiveGraph g = record_objective(c, xs, ys, 1.0, norm);
    return g.tape.scalar_value(record_r1_penalty(g.tape, c, g.critic, w));
  };
  CHECK(std::abs(penalty() - want) <= 1e-6 * std::max(1.0, want));

  ObjectiveGraph g = record_objective(c, xs, ys, 1.0, norm);
  g.tape.backward(record_r1_penalty(g.tape, c, g.critic, w));
  const auto grads = ad::collect_gradients(g.tape, g.critic.body);
  double worst = 0.0;
  for (std::size_t l = 0; l < c.body.layers.size(); ++l) {
    for (std::size_t k = 0; k < c.body.layers[l].weight.data.size(); ++k) {
      worst = std::max(worst, testsupport::rel_err(grads.weights[l].data[k],
                                                   testsupport::central_diff(penalty, c.body.layers[l].weight.data[k])));
    }
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("estimator on one-dimensional data reaches W1") {
  Rng rng(68);
  std::vector<Vector> a, b;
  for (int i = 0; i < 48; ++i) {
    const double x = 2.0 * uniform01(rng) - 1.0;
    a.push_back({x});
    b.push_back({x + 0.5 * uniform01(rng)});
  }
  const auto P = make_empirical(a), Q = make_empirical(b);
  DiscrepancyConfig cfg;
  cfg.hidden = {32, 32};
  cfg.steps = 3000;
  cfg.seed = 3;
  const double w1 = wasserstein_exact(P, Q, 1.0).distance;
  const auto est = estimate_discrepancy(P, Q, cfg);
  CHECK(est.value / w1 >= 0.90);
  CHECK(est.value / w1 <= 1.001);
  CHECK(est.value == *std::max_element(est.trace.begin(), est.trace.end()));
  CHECK(est.trace_steps.back() == cfg.steps);
  for (double s : est.certified_sigma) CHECK(s > 0.0);

  const auto again = estimate_discrepancy(P, Q, cfg);
  CHECK(again.value == est.value);
  CHECK(again.trace == est.trace);
}

TEST_CASE("self-discrepancy stays at zero") {
  Rng rng(69);
  const auto P = random_cloud(rng, 30, 2, false);
  DiscrepancyConfig cfg;
  cfg.hidden = {16, 16};
  cfg.steps = 200;
  cfg.n = 4;
  const auto est = estimate_discrepancy(P, P, cfg);
  CHECK(est.value <= 0.02 * cfg.K * 4.0 * std::sqrt(2.0));
  CHECK(est.value == 0.0);
}

TEST_CASE("warm start after zero padding cannot lose value") {
  Rng rng(70);
  const auto P = random_cloud(rng, 20, 2, false), Q = random_cloud(rng, 20, 2, false);
  DiscrepancyConfig cfg;
  cfg.hidden = {16, 16};
  cfg.steps = 150;
  const auto base = estimate_discrepancy(P, Q, cfg);
  DiscrepancyConfig wide = cfg;
  wide.n = 16;
  const auto warm = estimate_discrepancy(P, Q, wide, embed_zero_pad(base.critic, 16));
  CHECK(warm.value >= base.value - 1e-9);
}

TEST_CASE("L_inf lower bound on a trained critic") {
  Rng rng(71);
  const auto P = random_cloud(rng, 16, 2, false), Q = random_cloud(rng, 16, 2, false);
  DiscrepancyConfig cfg;
  cfg.hidden = {16, 16};
  cfg.steps = 300;
  cfg.n = 2;
  const auto pq = estimate_discrepancy(P, Q, cfg), qp = estimate_discrepancy(Q, P, cfg);
  std::vector<Vector> grid{Vector(2, 0.0)};
  const auto check = linf_lower_bound_check(pq.critic, P, Q, 1.0, grid, pq.value, qp.value, 1e-9);
  CHECK(check.holds);
  CHECK(check.max_gap <= check.bound + 1e-9);
}

TEST_CASE("config validation") {
  Rng rng(72);
  const auto P = random_cloud(rng, 4, 2, false), Q = random_cloud(rng, 4, 3, false);
  DiscrepancyConfig cfg;
  CHECK_THROWS_AS(estimate_discrepancy(P, Q, cfg), Error);
  cfg.p = 0.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.n = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.K = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.hidden = {4, 0};
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.n = 2;
  CHECK_THROWS_AS(estimate_discrepancy(P, P, cfg, make_critic(2, 3, 1.0, false, {4}, rng)), Error);
}
