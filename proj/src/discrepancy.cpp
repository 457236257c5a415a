#include "pcd/discrepancy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "pcd/srvt.hpp"

namespace pcd {
namespace {

std::vector<ad::SpectralEstimate> estimates_for(const CriticNetwork& critic, int iters) {
  if (!critic.body.spectral) return {};
  if (iters == kCertified) return ad::exact_spectral_estimates(critic.body);
  return ad::spectral_estimates(critic.body, iters);
}

Vector batch_weights(const Batch& b) {
  if (b.weights.empty()) return Vector(b.points.rows, 1.0 / static_cast<double>(b.points.rows));
  if (b.weights.size() != b.points.rows) throw Error("batch: weight count differs from row count");
  return b.weights;
}

void check_batch(const CriticNetwork& critic, const Batch& b, const char* who) {
  if (b.points.rows == 0) throw Error(std::string(who) + ": empty batch");
  if (b.points.cols != critic.in_dim()) throw Error(std::string(who) + ": batch dimension mismatch");
}

EmpiricalDistribution image_of(const CriticNetwork& critic, const EmpiricalDistribution& dist) {
  return make_empirical(critic_apply(critic, dist.points()), dist.weights());
}

Batch draw_batch(const EmpiricalDistribution& dist, std::size_t size, Rng& rng) {
  if (dist.size() <= size) return full_batch(dist);
  Batch b{Matrix(size, dist.dim()), {}};
  Vector cumulative;
  if (!dist.uniform()) {
    cumulative.resize(dist.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < dist.size(); ++i) cumulative[i] = acc += dist.weight(i);
  }
  for (std::size_t r = 0; r < size; ++r) {
    std::size_t idx;
    if (cumulative.empty()) {
      idx = uniform_index(rng, dist.size());
    } else {
      const double u = uniform01(rng) * cumulative.back();
      idx = std::min<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin(),
                                  dist.size() - 1);
    }
    std::copy_n(dist.point(idx).begin(), dist.dim(), b.points.row(r).begin());
  }
  return b;
}

}  // namespace

CriticNetwork make_critic(std::size_t in_dim, std::size_t n, double K, bool srvt,
                          const std::vector<std::size_t>& hidden, Rng& rng, int warmup_iters) {
  if (!(K > 0.0)) throw Error("make_critic: K must be positive");
  CriticNetwork c;
  c.body = ad::make_mlp(in_dim, hidden, n, true, rng);
  c.K = K;
  c.srvt = srvt;
  if (warmup_iters > 0) ad::refresh_spectral_state(c.body, warmup_iters);
  return c;
}

CriticGraph record_critic(ad::Tape& tape, const CriticNetwork& critic, ad::NodeId input,
                          std::span<const ad::SpectralEstimate> normalization, ad::RecordOptions opts) {
  CriticGraph g;
  g.body = ad::record_mlp(tape, critic.body, input, normalization, opts);
  g.scaled = tape.scale(g.body.output, critic.K);
  g.output = g.scaled;
  if (critic.srvt) {
    g.diff = tape.first_diff(g.scaled);
    g.output = tape.signed_sqrt(g.diff, kSrvtEpsilon, critic.sqrt_forward);
  }
  if (!critic.shift.empty()) {
    if (critic.shift.size() != critic.out_dim()) throw Error("critic shift has the wrong dimension");
    Matrix s(1, critic.shift.size());
    s.data = critic.shift;
    g.output = tape.sub(g.output, tape.leaf(std::move(s)));
  }
  return g;
}

Matrix critic_apply(const CriticNetwork& critic, const Matrix& x, int iters) {
  if (x.cols != critic.in_dim()) throw Error("critic_apply: input dimension mismatch");
  const auto est = estimates_for(critic, iters);
  ad::Tape tape;
  const CriticGraph g = record_critic(tape, critic, tape.leaf_ref(x, false), est, {false, true});
  return tape.value(g.output);
}

Batch full_batch(const EmpiricalDistribution& dist) { return {dist.points(), dist.weights()}; }

ObjectiveGraph record_objective(const CriticNetwork& critic, const Batch& xs, const Batch& ys, double p,
                                std::span<const ad::SpectralEstimate> normalization) {
  if (!(p >= 1.0)) throw Error("critic_objective: p must be >= 1");
  check_batch(critic, xs, "critic_objective");
  check_batch(critic, ys, "critic_objective");
  const std::size_t nx = xs.points.rows;
  const std::size_t rows = nx + ys.points.rows;
  Matrix stacked(rows, critic.in_dim());
  std::copy(xs.points.data.begin(), xs.points.data.end(), stacked.data.begin());
  std::copy(ys.points.data.begin(), ys.points.data.end(), stacked.data.begin() + static_cast<long>(xs.points.size()));
  Vector w_real(rows, 0.0), w_fake(rows, 0.0);
  const Vector wx = batch_weights(xs), wy = batch_weights(ys);
  std::copy(wx.begin(), wx.end(), w_real.begin());
  std::copy(wy.begin(), wy.end(), w_fake.begin() + static_cast<long>(nx));

  ObjectiveGraph g;
  g.real_rows = nx;
  ad::Tape& t = g.tape;
  g.critic = record_critic(t, critic, t.leaf(std::move(stacked), false), normalization, {true, true});
  ad::NodeId powered = t.row_norm(g.critic.output);
  if (p != 1.0) powered = t.power(powered, p);
  g.real_term = t.power(t.weighted_sum(powered, std::move(w_real)), 1.0 / p, kRootFloor);
  g.fake_term = t.power(t.weighted_sum(powered, std::move(w_fake)), 1.0 / p, kRootFloor);
  g.objective = t.sub(g.real_term, g.fake_term);
  return g;
}

double critic_objective(const CriticNetwork& critic, const Batch& xs, const Batch& ys, double p, int iters) {
  return record_objective(critic, xs, ys, p, estimates_for(critic, iters)).value();
}

double critic_objective(const CriticNetwork& critic, const EmpiricalDistribution& P,
                        const EmpiricalDistribution& Q, double p, int iters) {
  return critic_objective(critic, full_batch(P), full_batch(Q), p, iters);
}

ad::NodeId record_r1_penalty(ad::Tape& tape, const CriticNetwork& critic, const CriticGraph& graph,
                             std::span<const double> row_weights) {
  const std::size_t rows = tape.value(graph.output).rows;  // tape values move as nodes are added
  if (row_weights.size() > rows) throw Error("record_r1_penalty: more weights than rows");
  // d|D|/dD, then back through S, K and every layer with the activation slopes
  // held piecewise constant.
  ad::NodeId g = tape.row_normalize(graph.output);
  if (critic.srvt) {
    g = tape.mul(g, tape.signed_sqrt_slope(graph.diff, kSrvtEpsilon));
    g = tape.first_diff_adjoint(g);
  }
  g = tape.scale(g, critic.K);
  const auto& layers = critic.body.layers;
  for (std::size_t l = layers.size(); l-- > 0;) {
    if (layers[l].activation == ad::Activation::kLeakyRelu) {
      g = tape.mul(g, tape.leaky_relu_slope(graph.body.pre_activations[l], ad::kLeakySlope));
    }
    g = tape.matmul(g, graph.body.effective_weights[l]);
  }
  Vector w(rows, 0.0);
  std::copy(row_weights.begin(), row_weights.end(), w.begin());
  return tape.weighted_sum(tape.row_sum(tape.mul(g, g)), std::move(w));
}

void DiscrepancyConfig::validate() const {
  if (!(p >= 1.0)) throw Error("discrepancy config: p must be >= 1");
  if (n < 1) throw Error("discrepancy config: n must be >= 1");
  if (!(K > 0.0)) throw Error("discrepancy config: K must be positive");
  if (batch_size < 1 || eval_every < 1) throw Error("discrepancy config: counts must be positive");
  for (std::size_t h : hidden) {
    if (h < 1) throw Error("discrepancy config: zero-width hidden layer");
  }
}

DiscrepancyEstimate estimate_discrepancy(const EmpiricalDistribution& P, const EmpiricalDistribution& Q,
                                         const DiscrepancyConfig& cfg, std::optional<CriticNetwork> init) {
  cfg.validate();
  if (P.dim() != Q.dim()) throw Error("estimate_discrepancy: dimension mismatch");
  tune_allocator();
  const auto start = std::chrono::steady_clock::now();

  Rng init_rng(derive_seed(cfg.seed, "critic"));
  Rng batch_rng(derive_seed(cfg.seed, "batches"));
  CriticNetwork critic;
  if (init) {
    if (init->in_dim() != P.dim() || init->out_dim() != cfg.n || init->srvt != cfg.srvt || init->K != cfg.K) {
      throw Error("estimate_discrepancy: initial critic does not match the config");
    }
    critic = std::move(*init);
  } else {
    critic = make_critic(P.dim(), cfg.n, cfg.K, cfg.srvt, cfg.hidden, init_rng);
  }
  ad::AdamState adam = ad::make_adam(critic.body, cfg.adam);
  const Batch all_p = full_batch(P), all_q = full_batch(Q);

  DiscrepancyEstimate est;
  auto evaluate = [&](std::size_t step) {
    const double v = critic_objective(critic, all_p, all_q, cfg.p);
    est.trace.push_back(v);
    est.trace_steps.push_back(step);
    if (est.trace.size() == 1 || v > est.value) {
      est.value = v;
      est.best_step = step;
      est.critic = critic;
    }
  };

  evaluate(0);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const Batch xs = draw_batch(P, cfg.batch_size, batch_rng);
    const Batch ys = draw_batch(Q, cfg.batch_size, batch_rng);
    std::vector<ad::SpectralEstimate> norm;
    if (critic.body.spectral) norm = ad::refresh_spectral_state(critic.body, 1);
    ObjectiveGraph og = record_objective(critic, xs, ys, cfg.p, norm);
    og.tape.backward(og.objective);
    ad::MlpGradients grads = ad::take_gradients(og.tape, og.critic.body);
    for (auto& w : grads.weights) {
      for (double& v : w.data) v = -v;
    }
    for (auto& b : grads.biases) {
      for (double& v : b) v = -v;
    }
    ad::adam_step(adam, critic.body, grads);
    if (step % cfg.eval_every == 0 || step == cfg.steps) evaluate(step);
  }

  for (const auto& s : estimates_for(est.critic, kCertified)) est.certified_sigma.push_back(s.sigma);
  est.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return est;
}

CriticNetwork embed_zero_pad(const CriticNetwork& critic, std::size_t n_prime) {
  if (n_prime <= critic.out_dim()) throw Error("embed_zero_pad: n' must exceed n");
  if (critic.srvt) throw Error("embed_zero_pad: not an embedding for critics ending in SRVT");
  CriticNetwork out = critic;
  ad::DenseLayer& last = out.body.layers.back();
  Matrix w(n_prime, last.in_dim());
  std::copy(last.weight.data.begin(), last.weight.data.end(), w.data.begin());
  last.weight = std::move(w);
  last.bias.resize(n_prime, 0.0);
  last.sn_u.resize(n_prime, 0.0);
  if (!out.shift.empty()) out.shift.resize(n_prime, 0.0);
  return out;
}

std::pair<double, double> base_point_check(const CriticNetwork& critic, const EmpiricalDistribution& P,
                                           const EmpiricalDistribution& Q, double p,
                                           std::span<const double> x0) {
  if (x0.size() != critic.out_dim()) throw Error("base_point_check: base point dimension mismatch");
  const auto dp = image_of(critic, P), dq = image_of(critic, Q);
  const double at_x0 = p_centrality(dp, x0, p) - p_centrality(dq, x0, p);

  CriticNetwork moved = critic;
  if (moved.shift.empty()) moved.shift.assign(critic.out_dim(), 0.0);
  for (std::size_t i = 0; i < x0.size(); ++i) moved.shift[i] += x0[i];
  const Vector origin(critic.out_dim(), 0.0);
  const double at_origin =
      p_centrality(image_of(moved, P), origin, p) - p_centrality(image_of(moved, Q), origin, p);
  return {at_x0, at_origin};
}

LinfCheck linf_lower_bound_check(const CriticNetwork& critic, const EmpiricalDistribution& P,
                                 const EmpiricalDistribution& Q, double p,
                                 const std::vector<Vector>& grid, double estimate_pq,
                                 double estimate_qp, double tolerance) {
  const auto dp = image_of(critic, P), dq = image_of(critic, Q);
  LinfCheck r;
  r.bound = std::max(estimate_pq, estimate_qp);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (grid[k].size() != critic.out_dim()) throw Error("linf_lower_bound_check: base point dimension mismatch");
    const double gap = std::abs(p_centrality(dp, grid[k], p) - p_centrality(dq, grid[k], p));
    if (k == 0 || gap > r.max_gap) {
      r.max_gap = gap;
      r.argmax = k;
    }
  }
  r.holds = r.max_gap <= r.bound + tolerance;
  return r;
}

}  // namespace pcd
