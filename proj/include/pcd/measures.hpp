#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcd/common.hpp"

namespace pcd {

/// Finite weighted point cloud in R^m. Weights are nonnegative and sum to one;
/// point order is significant (all reductions run left to right over it).
class EmpiricalDistribution {
 public:
  std::size_t size() const { return points_.rows; }
  std::size_t dim() const { return points_.cols; }

  const Matrix& points() const { return points_; }
  std::span<const double> point(std::size_t i) const { return points_.row(i); }
  const Vector& weights() const { return weights_; }
  double weight(std::size_t i) const { return weights_[i]; }

  /// True when every weight equals 1/N exactly.
  bool uniform() const;

 private:
  friend EmpiricalDistribution make_empirical(Matrix points, std::optional<Vector> weights);

  Matrix points_;
  Vector weights_;
};

/// Builds a distribution. Missing weights default to 1/N; given weights are
/// renormalized to sum one. Throws on empty input, mixed dimensions, negative
/// weights or all-zero weights.
EmpiricalDistribution make_empirical(Matrix points, std::optional<Vector> weights = std::nullopt);
EmpiricalDistribution make_empirical(const std::vector<Vector>& points,
                                     std::optional<Vector> weights = std::nullopt);

EmpiricalDistribution dirac(std::span<const double> x);

/// (sum_i w_i |x - y_i|^p)^(1/p), Euclidean distance.
double p_centrality(const EmpiricalDistribution& dist, std::span<const double> x, double p);

using PointMap = std::function<Vector(std::span<const double>)>;

/// Image of every support point under f; weights are kept per point and
/// coincident images are not merged.
EmpiricalDistribution pushforward(const EmpiricalDistribution& dist, const PointMap& f);

// Sample files: one sample per row, header `x1,...,xm[,weight]`.
EmpiricalDistribution read_samples_csv(const std::string& path);
EmpiricalDistribution parse_samples_csv(const std::string& text);
void write_samples_csv(const std::string& path, const EmpiricalDistribution& dist,
                       bool with_weights);

}  // namespace pcd
