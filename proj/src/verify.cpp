#include "pcd/verify.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pcd/autodiff.hpp"
#include "pcd/discrepancy.hpp"
#include "pcd/format.hpp"
#include "pcd/measures.hpp"
#include "pcd/srvt.hpp"
#include "pcd/trainer.hpp"
#include "pcd/transport.hpp"

namespace pcd::verify {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Worst margin bookkeeping for one entry.
struct Tally {
  double worst = kInf;
  std::string note;
  std::size_t instances = 0;

  void check(double observed, double allowed, const std::string& where) {
    double m = allowed - observed;
    if (std::isnan(m)) m = -kInf;
    worst = std::min(worst, m);
    if (m < 0.0 && note.empty()) {
      note = where + ": observed " + format_sig(observed, 6) + ", allowed " + format_sig(allowed, 6);
    }
  }
};

struct Ctx {
  const Options& opts;
  Rng rng;
  std::size_t count;
  Tally tally;

  bool full() const { return opts.suite == Suite::kFull; }
};

using EntryFn = void (*)(Ctx&);

std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) { return lo + uniform_index(rng, hi - lo + 1); }
double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

std::string at(std::size_t i) { return "instance " + std::to_string(i); }

Vector random_vector(Rng& rng, std::size_t m, double spread) {
  Vector v(m);
  for (double& x : v) x = spread * gaussian(rng);
  return v;
}

EmpiricalDistribution random_distribution(Rng& rng, std::size_t n, std::size_t m, bool weighted,
                                          double spread = 2.0) {
  const Vector offset = random_vector(rng, m, 1.0);
  Matrix pts(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) pts(i, j) = offset[j] + spread * gaussian(rng);
  }
  if (!weighted) return make_empirical(std::move(pts));
  Vector w(n);
  for (double& x : w) x = 0.05 + uniform01(rng);
  return make_empirical(std::move(pts), std::move(w));
}

double random_p(Rng& rng) {
  static constexpr std::array<double, 4> grid{1.0, 1.5, 2.0, 3.0};
  return uniform01(rng) < 0.5 ? grid[uniform_index(rng, grid.size())] : uniform(rng, 1.0, 4.0);
}

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) e(i, j) = m(i, j);
  }
  return e;
}

double largest_singular_value(const Matrix& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(m));
  return svd.singularValues()(0);
}

Matrix random_orthogonal(Rng& rng, std::size_t n) {
  Eigen::MatrixXd g(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) g(i, j) = gaussian(rng);
  }
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out(i, j) = q(i, j);
  }
  return out;
}

Matrix random_points(Rng& rng, std::size_t rows, std::size_t cols, double spread) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = spread * gaussian(rng);
  return m;
}

double rel_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3}); }

// ---------------------------------------------------------------------------
// measures

void dirac_identity(Ctx& c) {
  for (std::size_t i = 0; i < c.count; ++i) {
    const std::size_t m = between(c.rng, 1, 4);
    const auto P = random_distribution(c.rng, between(c.rng, 1, 40), m, i % 2 == 1);
    const Vector x = random_vector(c.rng, m, 3.0);
    const double p = random_p(c.rng);
    const double oracle = wasserstein_exact(P, dirac(x), p).distance;
    c.tally.check(std::abs(p_centrality(P, x, p) - oracle), 1e-9, at(i));
  }
  c.tally.instances = c.count;
}

void sandwich_bound(Ctx& c) {
  for (std::size_t i = 0; i < c.count; ++i) {
    const std::size_t m = between(c.rng, 1, 4);
    const auto P = random_distribution(c.rng, between(c.rng, 1, 30), m, i % 2 == 1);
    const auto Q = random_distribution(c.rng, between(c.rng, 1, 30), m, i % 3 == 1);
    const Vector x = random_vector(c.rng, m, 3.0);
    const double p = random_p(c.rng);
    const double w = wasserstein_exact(P, Q, p).distance;
    const double sp = p_centrality(P, x, p), sq = p_centrality(Q, x, p);
    c.tally.check(std::abs(sp - sq), w + 1e-9, at(i) + " lower side");
    c.tally.check(w, sp + sq + 1e-9, at(i) + " upper side");
  }
  c.tally.instances = c.count;
}

void centrality_lipschitz(Ctx& c) {
  for (std::size_t i = 0; i < c.count; ++i) {
    const std::size_t m = between(c.rng, 1, 4);
    const auto P = random_distribution(c.rng, between(c.rng, 1, 30), m, i % 2 == 1);
    const double p = random_p(c.rng);
    for (int k = 0; k < 10; ++k) {
      const Vector x = random_vector(c.rng, m, 3.0);
      Vector y = x;
      const double step = k < 5 ? 1e-3 : 1.0;
      for (double& v : y) v += step * gaussian(c.rng);
      c.tally.check(std::abs(p_centrality(P, x, p) - p_centrality(P, y, p)), distance(x, y) + 1e-9, at(i));
    }
  }
  c.tally.instances = c.count;
}

void centrality_monotone_in_p(Ctx& c) {
  static constexpr std::array<double, 4> ps{1.0, 1.5, 2.0, 3.0};
  for (std::size_t i = 0; i < c.count; ++i) {
    const std::size_t m = between(c.rng, 1, 4);
    const auto P = random_distribution(c.rng, between(c.rng, 1, 30), m, i % 2 == 1);
    const Vector x = random_vector(c.rng, m, 3.0);
    for (std::size_t k = 0; k + 1 < ps.size(); ++k) {
      const double lo = p_centrality(P, x, ps[k]), hi = p_centrality(P, x, ps[k + 1]);
      c.tally.check(lo - hi, 1e-12 * std::max(1.0, hi), at(i));
    }
  }
  c.tally.instances = c.count;
}

// ---------------------------------------------------------------------------
// transport

void bruteforce_agreement(Ctx& c) {
  for (std::size_t i = 0; i < c.count; ++i) {
    const std::size_t n = 1 + i % 7;
    const std::size_t m = between(c.rng, 1, 3);
    const auto P = random_distribution(c.rng, n, m, false);
    const auto Q = random_distribution(c.rng, n, m, false);
    const double p = random_p(c.rng);
    c.tally.check(std::abs(wasserstein_exact(P, Q, p).distance - wasserstein_bruteforce(P, Q, p)), 1e-9, at(i));
  }
  c.tally.instances = c.count;
}

void quantile_agreement(Ctx& c) {
  for (std::size_t i = 0; i < c.count; ++i) {
    const auto P = random_distribution(c.rng, between(c.rng, 1, 60), 1, i % 2 == 0);
    const auto Q = random_distribution(c.rng, between(c.rng, 1, 60), 1, i % 3 == 0);
    const double p = random_p(c.rng);
    c.tally.check(std::abs(wasserstein_exact(P, Q, p).distance - wasserstein_1d(P, Q, p)), 1e-9, at(i));
  }
  c.tally.instances = c.count;
}

void plan_marginals(Ctx& c) {
  for (std::size_t i = 0; i < c.count; ++i) {
    const std::size_t m = between(c.rng, 1, 3);
    const auto P = random_distribution(c.rng, between(c.rng, 1, 40), m, true);
    const auto Q = random_distribution(c.rng, between(c.rng, 1, 40), m, i % 2 == 0);
    const double p = random_p(c.rng);
    const auto t = wasserstein_exact(P, Q, p);
    double worst = 0.0, total = 0.0;
    for (std::size_t a = 0; a < P.size(); ++a) {
      double s = 0.0;
      for (std::size_t b = 0; b < Q.size(); ++b) {
        s += t.plan.mass(a, b);
        total += t.plan.mass(a, b) * std::pow(distance(P.point(a), Q.point(b)), p);
        worst = std::max(worst, -t.plan.mass(a, b));
      }
      worst = std::max(worst, std::abs(s - P.weight(a)));
    }
    for (std::size_t b = 0; b < Q.size(); ++b) {
      double s = 0.0;
      for (std::size_t a = 0; a < P.size(); ++a) s += t.plan.mass(a, b);
      worst = std::max(worst, std::abs(s - Q.weight(b)));
    }
    c.tally.check(worst, 1e-9, at(i) + " marginals");
    c.tally.check(std::abs(std::pow(total, 1.0 / p) - t.distance), 1e-9, at(i) + " cost");
  }
  c.tally.instances = c.count;
}

void metric_axioms(Ctx& c) {
  for (std::size_t i = 0; i < c.count; ++i) {
    const std::size_t m = between(c.rng, 1, 3);
    const auto P = random_distribution(c.rng, between(c.rng, 1, 25), m, true);
    const auto Q = random_distribution(c.rng, between(c.rng, 1, 25), m, false);
    const auto R = random_distribution(c.rng, between(c.rng, 1, 25), m, true);
    const double p = random_p(c.rng);
    const double pq = wasserstein_exact(P, Q, p).distance, qp = wasserstein_exact(Q, P, p).distance;
    const double qr = wasserstein_exact(Q, R, p).distance, pr = wasserstein_exact(P, R, p).distance;
    c.tally.check(std::abs(pq - qp), 1e-9, at(i) + " symmetry");
    c.tally.check(pr, pq + qr + 1e-9, at(i) + " triangle");
    c.tally.check(wasserstein_exact(P, P, p).distance, 1e-9, at(i) + " identity");
  }
  c.tally.instances = c.count;
}

void pushforward_contraction(Ctx& c) {
  for (std::size_t i = 0; i < c.count; ++i) {
    const std::size_t m = between(c.rng, 1, 3), k = between(c.rng, 1, 3);
    const auto P = random_distribution(c.rng, between(c.rng, 1, 30), m, i % 2 == 0);
    const auto Q = random_distribution(c.rng, between(c.rng, 1, 30), m, false);
    const double p = random_p(c.rng);
    // A = U diag(s) V^T with max s = K, so the operator norm is known exactly.
    const double K = uniform(c.rng, 0.2, 3.0);
    const Matrix U = random_orthogonal(c.rng, k), V = random_orthogonal(c.rng, m);
    const std::size_t r = std::min(k, m);
    Vector s(r);
    for (std::size_t j = 0; j < r; ++j) s[j] = j == 0 ? K : K * uniform01(c.rng);
    Matrix A(k, m);
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < m; ++b) {
        double v = 0.0;
        for (std::size_t j = 0; j < r; ++j) v += U(a, j) * s[j] * V(b, j);
        A(a, b) = v;
      }
    }
    const PointMap f = [&A](std::span<const double> y) {
      Vector out(A.rows, 0.0);
      for (std::size_t a = 0; a < A.rows; ++a) {
        for (std::size_t b = 0; b < A.cols; ++b) out[a] += A(a, b) * y[b];
      }
      return out;
    };
    const double lhs = wasserstein_exact(pushforward(P, f), pushforward(Q, f), p).distance;
    c.tally.check(lhs, K * wasserstein_exact(P, Q, p).distance + 1e-9, at(i));
  }
  c.tally.instances = c.count;
}

void transport_monotone_in_p(Ctx& c) {
  static constexpr std::array<double, 4> ps{1.0, 1.5, 2.0, 3.0};
  for (std::size_t i = 0; i < c.count; ++i) {
    const std::size_t m = between(c.rng, 1, 3);
    const auto P = random_distribution(c.rng, between(c.rng, 1, 25), m, true);
    const auto Q = random_distribution(c.rng, between(c.rng, 1, 25), m, i % 2 == 0);
    for (std::size_t k = 0; k + 1 < ps.size(); ++k) {
      const double lo = wasserstein_exact(P, Q, ps[k]).distance, hi = wasserstein_exact(P, Q, ps[k + 1]).distance;
      c.tally.check(lo, hi + 1e-9, at(i));
    }
  }
  c.tally.instances = c.count;
}

// ---------------------------------------------------------------------------
// autodiff

constexpr double kFdStep = 1e-6;

// Smallest |pre-activation| and |SRVT increment| on a recorded critic; finite
// differences are only meaningful away from these kinks.
double kink_distance(const ad::Tape& tape, const CriticGraph& g) {
  double d = kInf;
  for (std::size_t l = 0; l + 1 < g.body.pre_activations.size(); ++l) {
    for (double v : tape.value(g.body.pre_activations[l]).data) d = std::min(d, std::abs(v));
  }
  if (g.diff != ad::kNoNode) {
    for (double v : tape.value(g.diff).data) d = std::min(d, 0.1 * std::abs(v));
  }
  return d;
}

template <class F>
void check_param_gradients(Ctx& c, CriticNetwork& critic, const ad::MlpGradients& grads, F eval,
                           const std::string& where) {
  for (std::size_t l = 0; l < critic.body.layers.size(); ++l) {
    auto& layer = critic.body.layers[l];
    auto probe = [&](double& param, double analytic) {
      const double keep = param;
      param = keep + kFdStep;
      const double up = eval();
      param = keep - kFdStep;
      const double down = eval();
      param = keep;
      c.tally.check(rel_error(analytic, (up - down) / (2 * kFdStep)), 1e-5, where + " layer " + std::to_string(l));
    };
    for (std::size_t k = 0; k < layer.weight.data.size(); ++k) probe(layer.weight.data[k], grads.weights[l].data[k]);
    for (std::size_t k = 0; k < layer.bias.size(); ++k) probe(layer.bias[k], grads.biases[l][k]);
  }
}

void gradient_check(Ctx& c) {
  static constexpr std::array<double, 4> ps{1.0, 1.5, 2.0, 3.0};
  static constexpr std::array<double, 3> ks{1.0, 0.5, 2.0};
  for (std::size_t i = 0; i < c.count; ++i) {
    const std::size_t in = between(c.rng, 1, 3), n = between(c.rng, 1, 4);
    std::vector<std::size_t> hidden(between(c.rng, 1, 3));
    for (auto& h : hidden) h = between(c.rng, 4, 10);
    const bool srvt = n >= 2 && i % 3 == 0;
    const double p = ps[i % ps.size()], K = ks[i % ks.size()];
    CriticNetwork critic = make_critic(in, n, K, srvt, hidden, c.rng);
    critic.sqrt_forward = ad::SqrtForward::kSmoothed;
    const auto norm = ad::spectral_estimates(critic.body, 3);

    Batch xs, ys;
    for (int attempt = 0;; ++attempt) {
      xs = {random_points(c.rng, between(c.rng, 3, 8), in, 1.5), {}};
      ys = {random_points(c.rng, between(c.rng, 3, 8), in, 1.5), {}};
      if (i % 2 == 1) {
        for (std::size_t r = 0; r < xs.points.rows; ++r) xs.weights.push_back(0.1 + uniform01(c.rng));
        const double s = std::accumulate(xs.weights.begin(), xs.weights.end(), 0.0);
        for (double& w : xs.weights) w /= s;
      }
      const ObjectiveGraph probe = record_objective(critic, xs, ys, p, norm);
      if (kink_distance(probe.tape, probe.critic) > 1e-4) break;
      if (attempt == 100) throw Error("gradient_check: no kink-free batch found");
    }
    const std::string where = at(i);

    ObjectiveGraph og = record_objective(critic, xs, ys, p, norm);
    og.tape.backward(og.objective);
    check_param_gradients(c, critic, ad::collect_gradients(og.tape, og.critic.body),
                          [&] { return record_objective(critic, xs, ys, p, norm).value(); }, where + " objective");

    // The penalty is itself a gradient; its parameter gradient exercises the
    // double-backward path.
    const Vector r1w(xs.points.rows, 1.0 / static_cast<double>(xs.points.rows));
    auto r1_value = [&] {
      ObjectiveGraph g = record_objective(critic, xs, ys, p, norm);
      const ad::NodeId r1 = record_r1_penalty(g.tape, critic, g.critic, r1w);
      return g.tape.scalar_value(r1);
    };
    {
      ObjectiveGraph g = record_objective(critic, xs, ys, p, norm);
      const ad::NodeId r1 = record_r1_penalty(g.tape, critic, g.critic, r1w);
      g.tape.backward(r1);
      check_param_gradients(c, critic, ad::collect_gradients(g.tape, g.critic.body), r1_value, where + " r1");
    }

    // Input gradient of mean |D(x)|.
    Matrix x = xs.points;
    auto input_value = [&] {
      ad::Tape t;
      const CriticGraph g = record_critic(t, critic, t.leaf_ref(x, false), norm, {false, true});
      return t.scalar_value(t.mean(t.row_norm(g.output)));
    };
    ad::Tape t;
    const ad::NodeId leaf = t.leaf(x, true);
    const CriticGraph g = record_critic(t, critic, leaf, norm, {false, true});
    t.backward(t.mean(t.row_norm(g.output)));
    const Matrix analytic = t.adjoint(leaf);
    for (std::size_t k = 0; k < x.data.size(); ++k) {
      const double keep = x.data[k];
      x.data[k] = keep + kFdStep;
      const double up = input_value();
      x.data[k] = keep - kFdStep;
      const double down = input_value();
      x.data[k] = keep;
      c.tally.check(rel_error(analytic.data[k], (up - down) / (2 * kFdStep)), 1e-5, where + " input");
    }
  }
  c.tally.instances = c.count;
}

void spectral_norm_svd(Ctx& c) {
  for (std::size_t i = 0; i < c.count; ++i) {
    const Matrix w = random_points(c.rng, 8, 8, 1.0);
    const Vector u0 = ad::random_unit_vector(8, c.rng);
    const double est = ad::spectral_norm(w, 100, u0).sigma;
    c.tally.check(std::abs(est - largest_singular_value(w)), 1e-6, at(i));
  }
  c.tally.instances = c.count;
}

void lipschitz_ratio(Ctx& c) {
  const std::size_t pairs = c.full() ? 10000 : 2000;
  for (std::size_t i = 0; i < c.count; ++i) {
    const double K = uniform(c.rng, 0.5, 2.0);
    const CriticNetwork critic = make_critic(4, 3, K, false, {32, 32}, c.rng);
    Matrix x(2 * pairs, 4);
    for (std::size_t r = 0; r < pairs; ++r) {
      const double step = r % 2 == 0 ? 1e-2 : 2.0;
      for (std::size_t j = 0; j < 4; ++j) {
        x(2 * r, j) = 2.0 * gaussian(c.rng);
        x(2 * r + 1, j) = x(2 * r, j) + step * gaussian(c.rng);
      }
    }
    const Matrix y = critic_apply(critic, x);
    double worst = 0.0;
    for (std::size_t r = 0; r < pairs; ++r) {
      const double dx = distance(x.row(2 * r), x.row(2 * r + 1));
      if (dx > 0.0) worst = std::max(worst, distance(y.row(2 * r), y.row(2 * r + 1)) / dx);
    }
    c.tally.check(worst, K + 1e-3, at(i));
  }
  c.tally.instances = c.count * pairs;
}

TrainConfig small_train_config(std::uint64_t seed, std::size_t steps) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.z_dim = 4;
  cfg.generator_hidden = {32, 32};
  cfg.critic_hidden = {32, 32};
  cfg.batch_size = 32;
  cfg.steps = steps;
  cfg.eval_every = std::max<std::size_t>(1, steps / 4);
  return cfg;
}

bool same_parameters(const ad::Mlp& a, const ad::Mlp& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (a.layers[l].weight != b.layers[l].weight || a.layers[l].bias != b.layers[l].bias ||
        a.layers[l].sn_u != b.layers[l].sn_u) {
      return false;
    }
  }
  return true;
}

void trajectory_determinism(Ctx& c) {
  const TrainConfig cfg = small_train_config(c.rng(), 100);
  auto run = [&] {
    TrainState s = init_training(cfg);
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
      for (std::size_t d = 0; d < cfg.n_dis; ++d) {
        discriminator_step(s, sample_points(cfg.dataset, cfg.batch_size, s.data_rng));
      }
      generator_step(s);
    }
    return s;
  };
  const TrainState a = run(), b = run();
  const bool same = same_parameters(a.generator, b.generator) && same_parameters(a.critic.body, b.critic.body);
  c.tally.check(same ? 0.0 : 1.0, 0.0, "parameters after 100 steps differ");
  c.tally.instances = 2;
}

// ---------------------------------------------------------------------------
// srvt

constexpr std::array<std::size_t, 4> kSrvtDims{1, 16, 128, 1024};

void srvt_roundtrip(Ctx& c) {
  const auto inverse = c.opts.srvt_inverse ? c.opts.srvt_inverse
                                           : std::function<Vector(std::span<const double>)>(srvt_inverse);
  for (std::size_t n : kSrvtDims) {
    for (std::size_t i = 0; i < c.count; ++i) {
      Vector x(n);
      for (double& v : x) v = uniform(c.rng, -10.0, 10.0);
      const Vector back = inverse(srvt_forward(x));
      double err = back.size() == n ? 0.0 : kInf;
      for (std::size_t j = 0; j < std::min(n, back.size()); ++j) err = std::max(err, std::abs(back[j] - x[j]));
      c.tally.check(err, 1e-9, "n=" + std::to_string(n) + " " + at(i));
    }
  }
  c.tally.instances = c.count * kSrvtDims.size();
}

void pullback_identity(Ctx& c) {
  for (std::size_t n : kSrvtDims) {
    for (std::size_t i = 0; i < c.count; ++i) {
      Vector x(n);
      for (double& v : x) v = uniform(c.rng, -10.0, 10.0);
      const double q = pullback_norm(x);
      c.tally.check(std::abs(q - norm2(srvt_forward(x))), 1e-12, "n=" + std::to_string(n) + " norm");
      double total = 0.0, prev = 0.0;
      for (double v : x) {
        total += std::abs(v - prev);
        prev = v;
      }
      // The squared form is compared relative to its size (the sum reaches 1e4).
      c.tally.check(std::abs(q * q - total), 1e-12 * std::max(1.0, total), "n=" + std::to_string(n) + " square");
    }
  }
  c.tally.instances = c.count * kSrvtDims.size();
}

void signature_distinct(Ctx& c) {
  std::vector<std::size_t> sizes(c.count);
  std::iota(sizes.begin(), sizes.end(), 1);
  if (sizes.back() < 1024) sizes.push_back(1024);
  for (std::size_t n : sizes) {
    const auto sig = graph_signature(n);
    std::set<NeuronSignature> unique(sig.begin(), sig.end());
    const double dup = static_cast<double>(n - unique.size()) + (sig.size() == n ? 0.0 : 1.0);
    c.tally.check(dup, 0.0, "n=" + std::to_string(n) + " repeated signatures");
  }
  c.tally.instances = sizes.size();
}

void permutation_asymmetry(Ctx& c) {
  std::size_t perms = 0;
  for (std::size_t n = 2; n <= c.count; ++n) {
    std::vector<std::size_t> pi(n);
    std::iota(pi.begin(), pi.end(), 0);
    std::size_t missing = 0;
    while (std::next_permutation(pi.begin(), pi.end())) {
      ++perms;
      bool witnessed = false;
      for (int trial = 0; trial < 1000 && !witnessed; ++trial) {
        Vector x(n), px(n);
        for (double& v : x) v = uniform(c.rng, -1.0, 1.0);
        for (std::size_t j = 0; j < n; ++j) px[j] = x[pi[j]];
        witnessed = std::abs(norm2(srvt_forward(px)) - norm2(srvt_forward(x))) > 1e-9;
      }
      if (!witnessed) ++missing;
    }
    c.tally.check(static_cast<double>(missing), 0.0, "n=" + std::to_string(n) + " permutations without witness");
  }
  c.tally.instances = perms;
}

void smoothed_gradient(Ctx& c) {
  for (std::size_t i = 0; i < c.count; ++i) {
    const std::size_t n = between(c.rng, 1, 16);
    Matrix x(1, n), w(1, n);
    for (double& v : w.data) v = gaussian(c.rng);
    for (;;) {
      for (double& v : x.data) v = uniform(c.rng, -1.0, 1.0);
      bool clear = true;
      double prev = 0.0;
      for (double v : x.data) {
        clear = clear && std::abs(v - prev) > 1e-4;
        prev = v;
      }
      if (clear) break;
    }
    auto value = [&] {
      ad::Tape t;
      const ad::NodeId y = record_srvt(t, t.leaf_ref(x, false), kSrvtEpsilon, ad::SqrtForward::kSmoothed);
      return t.scalar_value(t.row_sum(t.mul(y, t.leaf_ref(w, false))));
    };
    ad::Tape t;
    const ad::NodeId leaf = t.leaf(x, true);
    const ad::NodeId y = record_srvt(t, leaf, kSrvtEpsilon, ad::SqrtForward::kSmoothed);
    t.backward(t.row_sum(t.mul(y, t.leaf_ref(w, false))));
    const Matrix analytic = t.adjoint(leaf);
    for (std::size_t k = 0; k < n; ++k) {
      const double keep = x.data[k];
      x.data[k] = keep + kFdStep;
      const double up = value();
      x.data[k] = keep - kFdStep;
      const double down = value();
      x.data[k] = keep;
      c.tally.check(rel_error(analytic.data[k], (up - down) / (2 * kFdStep)), 1e-5, at(i));
    }
  }
  c.tally.instances = c.count;
}

// ---------------------------------------------------------------------------
// discrepancy

// P ~ U[-1, 1], Q = P + U[0, 0.5] pointwise: Q stochastically dominates P, so
// the optimal 1-Lipschitz witness is monotone and a leaky-ReLU critic can
// represent it.
std::pair<EmpiricalDistribution, EmpiricalDistribution> ordered_instance(Rng& rng, std::size_t n) {
  Matrix p(n, 1), q(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    p(i, 0) = uniform(rng, -1.0, 1.0);
    q(i, 0) = p(i, 0) + uniform(rng, 0.0, 0.5);
  }
  return {make_empirical(std::move(p)), make_empirical(std::move(q))};
}

void w1_tightness(Ctx& c) {
  const std::vector<double> ks = c.full() ? std::vector<double>{1.0, 2.0} : std::vector<double>{1.0};
  for (std::size_t i = 0; i < c.count; ++i) {
    const auto [P, Q] = ordered_instance(c.rng, 64);
    const double w1 = wasserstein_exact(P, Q, 1.0).distance;
    for (double K : ks) {
      DiscrepancyConfig cfg;
      cfg.K = K;
      cfg.steps = 5000;
      cfg.hidden = {32, 32};
      cfg.seed = c.rng();
      const double ratio = estimate_discrepancy(P, Q, cfg).value / (K * w1);
      const std::string where = at(i) + " K=" + format_sig(K, 3) + " ratio";
      c.tally.check(0.90 - ratio, 0.0, where);
      c.tally.check(ratio, 1.001, where);
    }
  }
  c.tally.instances = c.count * ks.size();
}

EmpiricalDistribution gaussian_cloud(Rng& rng, std::size_t n) {
  const Vector mean = random_vector(rng, 2, 1.0);
  const double sx = uniform(rng, 0.3, 1.5), sy = uniform(rng, 0.3, 1.5);
  Matrix pts(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    pts(i, 0) = mean[0] + sx * gaussian(rng);
    pts(i, 1) = mean[1] + sy * gaussian(rng);
  }
  return make_empirical(std::move(pts));
}

void wasserstein_upper_bound(Ctx& c) {
  static constexpr std::array<double, 2> ps{1.0, 2.0};
  static constexpr std::array<std::size_t, 3> ns{1, 16, 128};
  for (std::size_t i = 0; i < c.count; ++i) {
    const auto P = gaussian_cloud(c.rng, 32), Q = gaussian_cloud(c.rng, 32);
    const double K = i % 2 == 0 ? 1.0 : 2.0;
    for (double p : ps) {
      const double w = wasserstein_exact(P, Q, p).distance;
      for (std::size_t n : ns) {
        DiscrepancyConfig cfg;
        cfg.p = p;
        cfg.n = n;
        cfg.K = K;
        cfg.steps = 500;
        cfg.seed = c.rng();
        const double est = estimate_discrepancy(P, Q, cfg).value;
        c.tally.check(est, 1.02 * K * w, at(i) + " p=" + format_sig(p, 3) + " n=" + std::to_string(n));
      }
    }
  }
  c.tally.instances = c.count * ps.size() * ns.size();
}

void base_point_independence(Ctx& c) {
  for (std::size_t i = 0; i < c.count; ++i) {
    const std::size_t m = between(c.rng, 1, 3), n = between(c.rng, 1, 4);
    const bool srvt = n >= 2 && i % 2 == 0;
    const CriticNetwork critic = make_critic(m, n, uniform(c.rng, 0.5, 2.0), srvt, {16, 16}, c.rng);
    const auto P = random_distribution(c.rng, between(c.rng, 1, 20), m, true);
    const auto Q = random_distribution(c.rng, between(c.rng, 1, 20), m, false);
    const Vector x0 = i % 10 == 0 ? Vector(n, 0.0) : random_vector(c.rng, n, 1.0);
    const auto [a, b] = base_point_check(critic, P, Q, random_p(c.rng), x0);
    c.tally.check(std::abs(a - b), 1e-12, at(i));
  }
  c.tally.instances = c.count;
}

void k_linearity(Ctx& c) {
  for (std::size_t i = 0; i < c.count; ++i) {
    const std::size_t m = between(c.rng, 1, 3), n = between(c.rng, 1, 4);
    CriticNetwork critic = make_critic(m, n, uniform(c.rng, 0.5, 2.0), false, {16, 16}, c.rng);
    const auto P = random_distribution(c.rng, between(c.rng, 1, 20), m, true);
    const auto Q = random_distribution(c.rng, between(c.rng, 1, 20), m, false);
    const double p = random_p(c.rng);
    const double once = critic_objective(critic, P, Q, p);
    critic.K *= 2.0;
    const double twice = critic_objective(critic, P, Q, p);
    c.tally.check(std::abs(twice - 2.0 * once), 1e-12 * std::max(1.0, std::abs(twice)), at(i));
  }
  c.tally.instances = c.count;
}

void linf_lower_bound(Ctx& c) {
  for (std::size_t i = 0; i < c.count; ++i) {
    const auto P = gaussian_cloud(c.rng, 24), Q = gaussian_cloud(c.rng, 24);
    DiscrepancyConfig cfg;
    cfg.p = i % 2 == 0 ? 1.0 : 2.0;
    cfg.n = i % 2 == 0 ? 1 : 2;
    cfg.steps = 1500;
    cfg.hidden = {32, 32};
    cfg.seed = c.rng();
    const auto pq = estimate_discrepancy(P, Q, cfg);
    const auto qp = estimate_discrepancy(Q, P, cfg);
    const double tol = 0.02 * cfg.K * wasserstein_exact(P, Q, cfg.p).distance;

    // Grid around the image of the data, plus the estimator's own base point.
    const Matrix img = critic_apply(pq.critic, P.points());
    double spread = 0.0;
    for (double v : img.data) spread = std::max(spread, std::abs(v));
    std::vector<Vector> grid{Vector(cfg.n, 0.0)};
    for (int k = 0; k < 100; ++k) grid.push_back(random_vector(c.rng, cfg.n, 2.0 * spread + 1.0));

    const auto at_best = linf_lower_bound_check(pq.critic, P, Q, cfg.p, {grid[0]}, pq.value, qp.value, 1e-9);
    c.tally.check(at_best.max_gap, at_best.bound + 1e-9, at(i) + " best base point");
    const auto check = linf_lower_bound_check(pq.critic, P, Q, cfg.p, grid, pq.value, qp.value, tol);
    c.tally.check(check.max_gap, check.bound + tol, at(i) + " grid");
  }
  c.tally.instances = c.count;
}

void embedding_monotonicity(Ctx& c) {
  for (std::size_t i = 0; i < c.count; ++i) {
    const std::size_t m = between(c.rng, 1, 3), n = between(c.rng, 1, 3), n2 = n + between(c.rng, 1, 8);
    const double p = random_p(c.rng);
    const CriticNetwork critic = make_critic(m, n, uniform(c.rng, 0.5, 2.0), false, {16, 16}, c.rng);
    const Batch xs{random_points(c.rng, between(c.rng, 1, 20), m, 1.5), {}};
    const Batch ys{random_points(c.rng, between(c.rng, 1, 20), m, 1.5), {}};
    const CriticNetwork padded = embed_zero_pad(critic, n2);
    c.tally.check(std::abs(critic_objective(padded, xs, ys, p) - critic_objective(critic, xs, ys, p)), 1e-12,
                  at(i) + " padded objective");
    const auto s1 = ad::exact_spectral_estimates(critic.body);
    const auto s2 = ad::exact_spectral_estimates(padded.body);
    for (std::size_t l = 0; l < s1.size(); ++l) {
      c.tally.check(std::abs(s1[l].sigma - s2[l].sigma), 1e-12, at(i) + " certified sigma");
    }

    const auto P = make_empirical(xs.points), Q = make_empirical(ys.points);
    DiscrepancyConfig cfg;
    cfg.p = p;
    cfg.n = n;
    cfg.K = critic.K;
    cfg.steps = 100;
    cfg.hidden = {16, 16};
    cfg.seed = c.rng();
    const auto base = estimate_discrepancy(P, Q, cfg);
    cfg.n = n2;
    const auto grown = estimate_discrepancy(P, Q, cfg, embed_zero_pad(base.critic, n2));
    c.tally.check(base.value - grown.value, 1e-9, at(i) + " warm-started n'");
  }
  c.tally.instances = c.count;
}

// ---------------------------------------------------------------------------
// trainer

void metrics_determinism(Ctx& c) {
  const TrainConfig cfg = small_train_config(c.rng(), c.count);
  const auto a = train(cfg).records, b = train(cfg).records;
  bool same = a.size() == b.size();
  for (std::size_t k = 0; same && k < a.size(); ++k) {
    same = a[k].step == b[k].step && a[k].objective == b[k].objective && a[k].w1 == b[k].w1 &&
           a[k].modes == b[k].modes && a[k].hq_frac == b[k].hq_frac && a[k].seconds == b[k].seconds;
  }
  c.tally.check(same ? 0.0 : 1.0, 0.0, "metrics differ between identical runs");
  c.tally.instances = 2;
}

void objective_consistency(Ctx& c) {
  const TrainConfig cfg = small_train_config(c.rng(), c.count);
  const TrainResult r = train(cfg);
  const MetricsRecord& last = r.records.back();
  const EvalBatches batches = evaluation_batches(cfg, r.state.generator, last.step);
  const double again = critic_objective(r.state.critic, {batches.real, {}}, {batches.fake, {}}, cfg.p);
  c.tally.check(std::abs(again - last.objective), 1e-12, "final checkpoint");
  c.tally.instances = 1;
}

// Drives the same loop as train() and calls `probe` after every generator step.
template <class F>
void training_loop(const TrainConfig& cfg, F probe) {
  TrainState s = init_training(cfg);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    for (std::size_t d = 0; d < cfg.n_dis; ++d) {
      const double v = discriminator_step(s, sample_points(cfg.dataset, cfg.batch_size, s.data_rng));
      probe(s, step, v, false);
    }
    probe(s, step, generator_step(s), true);
  }
}

// sqrt of the top eigenvalue of W^T W: an oracle independent of the SVD used
// for certification.
double top_singular_by_gram(const Matrix& w) {
  const Eigen::MatrixXd e = to_eigen(w);
  const Eigen::MatrixXd gram = e.transpose() * e;
  return std::sqrt(std::max(0.0, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram).eigenvalues().maxCoeff()));
}

void lipschitz_during_training(Ctx& c) {
  const TrainConfig cfg = small_train_config(c.rng(), c.count);
  std::size_t checks = 0;
  training_loop(cfg, [&](const TrainState& s, std::size_t step, double, bool after_generator) {
    if (!after_generator || (step % cfg.eval_every != 0 && step != cfg.steps)) return;
    const auto cert = ad::exact_spectral_estimates(s.critic.body);
    for (std::size_t l = 0; l < cert.size(); ++l) {
      Matrix eff = s.critic.body.layers[l].weight;
      for (double& v : eff.data) v /= cert[l].sigma;
      const double sigma = top_singular_by_gram(eff);
      c.tally.check(std::abs(sigma - 1.0), 1e-3, "step " + std::to_string(step) + " layer " + std::to_string(l));
      ++checks;
    }
  });
  c.tally.instances = checks;
}

void sign_contract(Ctx& c) {
  const TrainConfig cfg = small_train_config(c.rng(), c.count);
  Rng batch_rng(c.rng());
  std::size_t checks = 0;
  training_loop(cfg, [&](const TrainState& s, std::size_t step, double, bool after_generator) {
    if (!after_generator) return;
    const Matrix real = sample_points(cfg.dataset, cfg.batch_size, batch_rng);
    const Matrix z = sample_noise(cfg.batch_size, cfg.z_dim, batch_rng);
    const ObjectiveGraph og = record_objective(s.critic, {real, {}}, {generate(s.generator, z), {}}, cfg.p,
                                               s.critic_norm);
    const double loss = generator_loss(s.critic, s.critic_norm, s.generator, z, cfg.p);
    // Loss is minus the fake term, so objective - loss leaves the real term.
    c.tally.check(std::abs(og.value() - loss - og.tape.scalar_value(og.real_term)), 1e-12,
                  "step " + std::to_string(step));
    ++checks;
  });
  c.tally.instances = checks;
}

void finite_steps(Ctx& c) {
  const TrainConfig cfg = small_train_config(c.rng(), c.count);
  std::size_t steps = 0;
  training_loop(cfg, [&](const TrainState& s, std::size_t step, double v, bool) {
    bool finite = std::isfinite(v);
    for (const auto& layer : s.critic.body.layers) {
      for (double w : layer.weight.data) finite = finite && std::isfinite(w);
    }
    c.tally.check(finite ? 0.0 : 1.0, 0.0, "non-finite value at step " + std::to_string(step));
    ++steps;
  });
  c.tally.instances = steps;
}

// ---------------------------------------------------------------------------

struct EntrySpec {
  const char* name;
  const char* reference;
  std::size_t fast;
  std::size_t full;
  EntryFn fn;
};

const std::vector<EntrySpec>& registry() {
  static const std::vector<EntrySpec> specs{
      {"measures.dirac_identity", "p-centrality equals W_p to the Dirac measure at x", 20, 100, dirac_identity},
      {"measures.sandwich_bound", "|sigma_P(x) - sigma_Q(x)| <= W_p(P,Q) <= sigma_P(x) + sigma_Q(x)", 20, 100,
       sandwich_bound},
      {"measures.centrality_lipschitz", "p-centrality is 1-Lipschitz in the base point", 20, 100,
       centrality_lipschitz},
      {"measures.centrality_monotone_in_p", "p-centrality is nondecreasing in p", 20, 100,
       centrality_monotone_in_p},
      {"transport.bruteforce_agreement", "min-cost flow matches permutation search, N <= 7", 14, 50,
       bruteforce_agreement},
      {"transport.quantile_agreement", "min-cost flow matches the 1D quantile coupling", 20, 50,
       quantile_agreement},
      {"transport.plan_marginals", "optimal plan has the prescribed marginals and cost", 10, 50, plan_marginals},
      {"transport.metric_axioms", "W_p is symmetric, vanishes on the diagonal, obeys the triangle inequality", 10,
       50, metric_axioms},
      {"transport.pushforward_contraction", "W_p(f*P, f*Q) <= K W_p(P,Q) for K-Lipschitz linear f", 20, 50,
       pushforward_contraction},
      {"transport.monotone_in_p", "W_p is nondecreasing in p", 10, 50, transport_monotone_in_p},
      {"autodiff.gradient_check", "reverse mode matches central differences on critic objectives", 5, 20,
       gradient_check},
      {"autodiff.spectral_norm_svd", "100 power iterations match the largest singular value", 5, 20,
       spectral_norm_svd},
      {"autodiff.lipschitz_ratio", "normalized network is K-Lipschitz on random pairs", 2, 5, lipschitz_ratio},
      {"autodiff.trajectory_determinism", "a fixed seed gives bit-identical parameters after 100 steps", 1, 1,
       trajectory_determinism},
      {"srvt.roundtrip", "S^-1(S(x)) = x", 50, 1000, srvt_roundtrip},
      {"srvt.pullback_identity", "pullback norm equals |S(x)|_2", 50, 1000, pullback_identity},
      {"srvt.signature_distinct", "output neurons have pairwise distinct structural signatures", 64, 1024,
       signature_distinct},
      {"srvt.permutation_asymmetry", "no nontrivial output permutation preserves |S(x)|_2", 5, 8,
       permutation_asymmetry},
      {"srvt.smoothed_gradient", "smoothed SRVT gradient matches central differences", 20, 100,
       smoothed_gradient},
      {"discrepancy.w1_tightness", "L_{1,1,K} = K W_1 on one-dimensional data", 1, 10, w1_tightness},
      {"discrepancy.wasserstein_upper_bound", "L_{p,n,K} <= K W_p", 1, 30, wasserstein_upper_bound},
      {"discrepancy.base_point_independence", "centrality gap at x0 equals the gap of D - x0 at 0", 20, 100,
       base_point_independence},
      {"discrepancy.k_linearity", "doubling K doubles the objective", 10, 50, k_linearity},
      {"discrepancy.linf_lower_bound", "sup over base points of the centrality gap is bounded by L", 2, 10,
       linf_lower_bound},
      {"discrepancy.embedding_monotonicity", "zero-padding preserves the objective and warm starts cannot lose",
       10, 50, embedding_monotonicity},
      {"trainer.metrics_determinism", "identical configs give identical metrics", 40, 200, metrics_determinism},
      {"trainer.objective_consistency", "logged objective matches a recomputation on the evaluation batches", 40,
       200, objective_consistency},
      {"trainer.lipschitz_during_training", "certified per-layer sigma is one at every evaluation checkpoint", 40,
       200,
       lipschitz_during_training},
      {"trainer.sign_contract", "objective minus generator loss equals the real term", 40, 200, sign_contract},
      {"trainer.finite_steps", "objective and weights stay finite while training", 40, 200, finite_steps},
  };
  return specs;
}

bool selected(const Options& opts, const std::string& name) {
  if (opts.only.empty()) return true;
  return std::any_of(opts.only.begin(), opts.only.end(),
                     [&](const std::string& prefix) { return name.rfind(prefix, 0) == 0; });
}

std::string margin_text(double m) {
  if (std::isinf(m)) return m > 0 ? "inf" : "-inf";
  return format_sig(m, 6);
}

}  // namespace

std::string to_string(Suite s) { return s == Suite::kFull ? "full" : "fast"; }

Suite suite_from_string(const std::string& s) {
  if (s == "fast") return Suite::kFast;
  if (s == "full") return Suite::kFull;
  throw Error("unknown suite '" + s + "' (expected fast or full)");
}

bool Report::pass() const {
  return std::all_of(entries.begin(), entries.end(), [](const Entry& e) { return e.pass; });
}

const Entry* Report::find(std::string_view name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

Report run(const Options& opts) {
  tune_allocator();
  Report report;
  report.suite = opts.suite;
  report.seed = opts.seed;
  for (const auto& spec : registry()) {
    if (!selected(opts, spec.name)) continue;
    const auto start = std::chrono::steady_clock::now();
    Ctx ctx{opts, Rng(derive_seed(opts.seed, spec.name)), opts.suite == Suite::kFull ? spec.full : spec.fast, {}};
    Entry e;
    e.name = spec.name;
    e.reference = spec.reference;
    try {
      spec.fn(ctx);
      e.pass = ctx.tally.worst >= 0.0;
      e.note = ctx.tally.note;
    } catch (const std::exception& ex) {
      e.pass = false;
      e.note = std::string("error: ") + ex.what();
    }
    e.instances = ctx.tally.instances;
    e.worst_margin = ctx.tally.worst;
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (opts.on_entry) opts.on_entry(e);
    report.entries.push_back(std::move(e));
  }
  return report;
}

std::vector<std::string> manifest() {
  std::vector<std::string> names;
  for (const auto& s : registry()) names.emplace_back(s.name);
  return names;
}

std::string manifest_hash() {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::string_view s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  };
  for (const auto& s : registry()) {
    mix(s.name);
    mix(s.reference);
    mix(std::to_string(s.fast));
    mix(std::to_string(s.full));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string render_text(const Report& report) {
  std::ostringstream out;
  out << "verify suite=" << to_string(report.suite) << " seed=" << report.seed << " manifest=" << manifest_hash()
      << '\n';
  std::size_t passed = 0;
  for (const auto& e : report.entries) {
    char line[256];
    std::snprintf(line, sizeof line, "%s  %-38s instances=%-7zu worst_margin=%-12s ", e.pass ? "PASS" : "FAIL",
                  e.name.c_str(), e.instances, margin_text(e.worst_margin).c_str());
    out << line << e.reference << '\n';
    if (!e.note.empty()) out << "      " << e.note << '\n';
    passed += e.pass ? 1 : 0;
  }
  out << "overall: " << (report.pass() ? "PASS" : "FAIL") << " (" << passed << '/' << report.entries.size()
      << " entries)\n";
  return out.str();
}

std::string render_json(const Report& report) {
  nlohmann::ordered_json j;
  j["suite"] = to_string(report.suite);
  j["seed"] = report.seed;
  j["manifest"] = manifest_hash();
  j["pass"] = report.pass();
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : report.entries) {
    nlohmann::ordered_json r;
    r["name"] = e.name;
    r["reference"] = e.reference;
    r["instances"] = e.instances;
    r["pass"] = e.pass;
    if (std::isfinite(e.worst_margin)) {
      r["worst_margin"] = e.worst_margin;
    } else {
      r["worst_margin"] = margin_text(e.worst_margin);
    }
    r["note"] = e.note;
    j["entries"].push_back(std::move(r));
  }
  return j.dump(2) + "\n";
}

}  // namespace pcd::verify
