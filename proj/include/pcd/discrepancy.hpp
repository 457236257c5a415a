#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "pcd/autodiff.hpp"
#include "pcd/measures.hpp"

namespace pcd {

inline constexpr double kRootFloor = 1e-24;
// Normalization behind every reported number: each layer divided by its exact
// largest singular value. A positive `iters` argument below runs that many
// power iterations from the stored state instead.
inline constexpr int kCertified = 0;

/// Critic x -> S(K * body(x)) - shift, where body is a spectrally normalized
/// network into R^n, S is the optional SRVT block and shift is an optional
/// constant (empty means zero). K multiplies the normalized body output, so it
/// bounds the Lipschitz constant of everything before S.
struct CriticNetwork {
  ad::Mlp body;
  double K = 1.0;
  bool srvt = false;
  Vector shift;
  // Forward value of the SRVT square root; kSmoothed makes the value consistent
  // with the smoothed backward rule (used for finite-difference checks).
  ad::SqrtForward sqrt_forward = ad::SqrtForward::kExact;

  std::size_t in_dim() const { return body.in_dim(); }
  std::size_t out_dim() const { return body.out_dim(); }
};

/// Spectral body with leaky-ReLU hidden layers. The stored power-iteration state
/// is warmed up with `warmup_iters` iterations so that single warm-started
/// iterations afterwards track the spectral norm closely.
CriticNetwork make_critic(std::size_t in_dim, std::size_t n, double K, bool srvt,
                          const std::vector<std::size_t>& hidden, Rng& rng, int warmup_iters = 20);

struct CriticGraph {
  ad::MlpGraph body;
  ad::NodeId scaled = ad::kNoNode;  // K * body(x)
  ad::NodeId diff = ad::kNoNode;    // first differences fed to the SRVT block
  ad::NodeId output = ad::kNoNode;
};

CriticGraph record_critic(ad::Tape& tape, const CriticNetwork& critic, ad::NodeId input,
                          std::span<const ad::SpectralEstimate> normalization,
                          ad::RecordOptions opts = {});

/// Critic outputs for every row of x under the given normalization.
Matrix critic_apply(const CriticNetwork& critic, const Matrix& x, int iters = kCertified);

/// Weighted batch. Empty weights mean uniform.
struct Batch {
  Matrix points;
  Vector weights;
};

Batch full_batch(const EmpiricalDistribution& dist);

/// The objective recorded on a tape, ready for backward().
struct ObjectiveGraph {
  ad::Tape tape;
  CriticGraph critic;
  ad::NodeId real_term = ad::kNoNode;  // (E_x |D(x)|^p)^(1/p)
  ad::NodeId fake_term = ad::kNoNode;  // (E_y |D(y)|^p)^(1/p)
  ad::NodeId objective = ad::kNoNode;  // real_term - fake_term
  std::size_t real_rows = 0;

  double value() const { return tape.scalar_value(objective); }
};

/// (E|D(x)|^p)^(1/p) - (E|D(y)|^p)^(1/p), each mean power floored at 1e-24
/// before the root. Both batches go through the critic in one pass.
ObjectiveGraph record_objective(const CriticNetwork& critic, const Batch& xs, const Batch& ys, double p,
                                std::span<const ad::SpectralEstimate> normalization);

/// Value of the objective under the given normalization.
double critic_objective(const CriticNetwork& critic, const Batch& xs, const Batch& ys, double p,
                        int iters = kCertified);
double critic_objective(const CriticNetwork& critic, const EmpiricalDistribution& P,
                        const EmpiricalDistribution& Q, double p, int iters = kCertified);

/// Adds weighted_mean_b |grad_x |D(x_b)||^2 over the first `rows` rows of the
/// recorded input, built from first-order tape ops so it can itself be
/// differentiated. Returns the 1x1 node.
ad::NodeId record_r1_penalty(ad::Tape& tape, const CriticNetwork& critic, const CriticGraph& graph,
                             std::span<const double> row_weights);

struct DiscrepancyConfig {
  double p = 1.0;
  std::size_t n = 1;
  double K = 1.0;
  bool srvt = false;
  std::size_t steps = 2000;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden{128, 128, 128};
  ad::AdamHyper adam{1e-3, 0.0, 0.9, 1e-8};
  std::size_t eval_every = 25;

  void validate() const;
};

struct DiscrepancyEstimate {
  double value = 0.0;
  std::vector<double> trace;            // certified full-data objective per evaluation
  std::vector<std::size_t> trace_steps;
  std::size_t best_step = 0;
  double wall_time = 0.0;               // seconds; never written to deterministic outputs
  CriticNetwork critic;                 // best critic
  std::vector<double> certified_sigma;  // per layer of the best critic, raw weights
};

/// Estimates L_{p,n,K}(P, Q) by Adam ascent on the critic and best-iterate
/// reporting of the certified full-data objective. A supplied critic is used as
/// the starting point (its n, K and srvt must match the config).
DiscrepancyEstimate estimate_discrepancy(const EmpiricalDistribution& P, const EmpiricalDistribution& Q,
                                         const DiscrepancyConfig& cfg,
                                         std::optional<CriticNetwork> init = std::nullopt);

/// Natural embedding R^n -> R^n' by constant-zero extra outputs. Not defined for
/// critics ending in SRVT (padding before S is not an embedding of S).
CriticNetwork embed_zero_pad(const CriticNetwork& critic, std::size_t n_prime);

/// (sigma_{D*P}(x0) - sigma_{D*Q}(x0), same at base 0 for the critic D - x0).
std::pair<double, double> base_point_check(const CriticNetwork& critic, const EmpiricalDistribution& P,
                                           const EmpiricalDistribution& Q, double p,
                                           std::span<const double> x0);

struct LinfCheck {
  bool holds = false;
  double max_gap = 0.0;   // max over the grid of |sigma_{D*P}(x0) - sigma_{D*Q}(x0)|
  double bound = 0.0;     // max(estimate_pq, estimate_qp)
  std::size_t argmax = 0;
};

LinfCheck linf_lower_bound_check(const CriticNetwork& critic, const EmpiricalDistribution& P,
                                 const EmpiricalDistribution& Q, double p,
                                 const std::vector<Vector>& grid, double estimate_pq,
                                 double estimate_qp, double tolerance);

}  // namespace pcd
