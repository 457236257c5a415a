#pragma once

#include <string>

#include "pcd/common.hpp"
#include "pcd/measures.hpp"

namespace pcd {

/// Optimal coupling returned by wasserstein_exact.
struct TransportPlan {
  Matrix mass;      // N x M, row sums = source weights, column sums = target weights
  double cost = 0;  // (sum_ij mass_ij |x_i - y_j|^p)^(1/p)
  double p = 1;
};

/// Largest N*M accepted by wasserstein_exact.
inline constexpr std::size_t kTransportSizeGuard = 10'000;

/// Exact W_p for one-dimensional inputs through the quantile coupling.
double wasserstein_1d(const EmpiricalDistribution& left, const EmpiricalDistribution& right, double p);

struct ExactTransport {
  double distance = 0;
  TransportPlan plan;
};

/// Exact W_p by min-cost flow (successive shortest paths with potentials) on the
/// dense bipartite transportation problem.
ExactTransport wasserstein_exact(const EmpiricalDistribution& left,
                                 const EmpiricalDistribution& right, double p);

/// Exhaustive search over all N! matchings; uniform weights, N = M <= 8.
double wasserstein_bruteforce(const EmpiricalDistribution& left,
                              const EmpiricalDistribution& right, double p);

/// Writes the nonzero plan entries as `i,j,mass` rows.
void write_plan_csv(const std::string& path, const TransportPlan& plan);

}  // namespace pcd
