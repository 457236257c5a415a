#pragma once

// Discretized square-root velocity transform on R^n with x_0 = 0:
//   S(x)_i    = sgn(x_i - x_{i-1}) sqrt|x_i - x_{i-1}|
//   S^-1(y)_i = sum_{j<=i} y_j |y_j|

#include <span>
#include <vector>

#include "pcd/autodiff.hpp"
#include "pcd/common.hpp"

namespace pcd {

inline constexpr double kSrvtEpsilon = 1e-8;

double signed_sqrt(double x);

Vector srvt_forward(std::span<const double> x);
Vector srvt_inverse(std::span<const double> y);

/// sqrt(sum_i |x_i - x_{i-1}|), the L2 norm seen through the transform.
double pullback_norm(std::span<const double> x);

struct SrvtBlock {
  std::size_t n = 1;
  double epsilon = kSrvtEpsilon;

  Vector forward(std::span<const double> x) const;
  Vector inverse(std::span<const double> y) const;
};

/// Structural fingerprint of one output neuron of the SRVT graph, where input i
/// feeds outputs i and i+1.
struct NeuronSignature {
  std::size_t in_degree = 0;
  std::size_t distance = 0;  // output hops to the unique in-degree-1 output

  auto operator<=>(const NeuronSignature&) const = default;
};

std::vector<NeuronSignature> graph_signature(std::size_t n);

/// Records S on the tape row by row. The backward rule uses the smoothed slope
/// 1 / (2 sqrt(|d| + eps)); `mode` picks the forward value.
ad::NodeId record_srvt(ad::Tape& tape, ad::NodeId x, double eps = kSrvtEpsilon,
                       ad::SqrtForward mode = ad::SqrtForward::kExact);

}  // namespace pcd
