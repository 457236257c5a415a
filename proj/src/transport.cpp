#include "pcd/transport.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "pcd/format.hpp"

namespace pcd {
namespace {

constexpr double kSaturation = 1e-12;
constexpr double kInf = std::numeric_limits<double>::infinity();

void check_pair(const EmpiricalDistribution& a, const EmpiricalDistribution& b, double p,
                const char* who) {
  if (a.dim() != b.dim()) throw Error(std::string(who) + ": dimension mismatch");
  if (!(p >= 1.0)) throw Error(std::string(who) + ": p must be >= 1");
}

Matrix cost_matrix(const EmpiricalDistribution& a, const EmpiricalDistribution& b, double p) {
  Matrix c(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) c(i, j) = std::pow(distance(a.point(i), b.point(j)), p);
  }
  return c;
}

bool nearly_uniform(const EmpiricalDistribution& d) {
  const double w = 1.0 / static_cast<double>(d.size());
  return std::all_of(d.weights().begin(), d.weights().end(),
                     [w](double v) { return std::abs(v - w) <= 1e-12; });
}

// Successive shortest paths on source -> left -> right -> sink. Node layout:
// 0 source, [1, N] left, [N+1, N+M] right, N+M+1 sink.
class TransportFlow {
 public:
  TransportFlow(const Matrix& cost, const Vector& supply, const Vector& demand)
      : n_(cost.rows),
        m_(cost.cols),
        cost_(cost),
        flow_(cost.rows, cost.cols),
        supply_left_(supply),
        demand_left_(demand),
        potential_(n_ + m_ + 2, 0.0),
        dist_(n_ + m_ + 2),
        parent_(n_ + m_ + 2),
        done_(n_ + m_ + 2) {}

  Matrix solve() {
    const std::size_t cap = 4 * (n_ * m_ + n_ + m_) + 16;
    for (std::size_t iter = 0; remaining_supply() > kSaturation; ++iter) {
      if (iter > cap) throw Error("wasserstein_exact: augmentation limit exceeded");
      if (!shortest_path()) break;
      augment();
    }
    return flow_;
  }

 private:
  std::size_t source() const { return 0; }
  std::size_t left(std::size_t i) const { return 1 + i; }
  std::size_t right(std::size_t j) const { return 1 + n_ + j; }
  std::size_t sink() const { return 1 + n_ + m_; }

  double remaining_supply() const {
    double s = 0.0;
    for (double v : supply_left_) s = std::max(s, v);
    double d = 0.0;
    for (double v : demand_left_) d = std::max(d, v);
    return std::min(s, d);
  }

  void relax(std::size_t from, std::size_t to, double edge_cost) {
    if (done_[to]) return;
    // Reduced costs are nonnegative up to rounding.
    const double rc = std::max(edge_cost + potential_[from] - potential_[to], 0.0);
    const double nd = dist_[from] + rc;
    if (nd < dist_[to]) {
      dist_[to] = nd;
      parent_[to] = from;
    }
  }

  bool shortest_path() {
    const std::size_t v_count = n_ + m_ + 2;
    std::fill(dist_.begin(), dist_.end(), kInf);
    std::fill(done_.begin(), done_.end(), 0);
    dist_[source()] = 0.0;
    for (;;) {
      std::size_t u = v_count;
      double best = kInf;
      for (std::size_t v = 0; v < v_count; ++v) {
        if (!done_[v] && dist_[v] < best) {
          best = dist_[v];
          u = v;
        }
      }
      if (u == v_count) return false;
      done_[u] = 1;
      if (u == sink()) break;
      if (u == source()) {
        for (std::size_t i = 0; i < n_; ++i) {
          if (supply_left_[i] > kSaturation) relax(u, left(i), 0.0);
        }
      } else if (u <= n_) {
        const std::size_t i = u - 1;
        for (std::size_t j = 0; j < m_; ++j) relax(u, right(j), cost_(i, j));
      } else if (u < sink()) {
        const std::size_t j = u - 1 - n_;
        for (std::size_t i = 0; i < n_; ++i) {
          if (flow_(i, j) > kSaturation) relax(u, left(i), -cost_(i, j));
        }
        if (demand_left_[j] > kSaturation) relax(u, sink(), 0.0);
      }
    }
    const double reach = dist_[sink()];
    for (std::size_t v = 0; v < v_count; ++v) potential_[v] += std::min(dist_[v], reach);
    return true;
  }

  // Residual capacity of the edge parent -> v on the current path.
  double residual(std::size_t from, std::size_t to) const {
    if (from == source()) return supply_left_[to - 1];
    if (to == sink()) return demand_left_[from - 1 - n_];
    if (from <= n_) return kInf;  // left -> right
    return flow_(to - 1, from - 1 - n_);  // right -> left (cancel)
  }

  void augment() {
    double push = kInf;
    for (std::size_t v = sink(); v != source(); v = parent_[v]) {
      push = std::min(push, residual(parent_[v], v));
    }
    for (std::size_t v = sink(); v != source(); v = parent_[v]) {
      const std::size_t u = parent_[v];
      if (u == source()) {
        supply_left_[v - 1] -= push;
      } else if (v == sink()) {
        demand_left_[u - 1 - n_] -= push;
      } else if (u <= n_) {
        flow_(u - 1, v - 1 - n_) += push;
      } else {
        flow_(v - 1, u - 1 - n_) -= push;
      }
    }
  }

  std::size_t n_;
  std::size_t m_;
  const Matrix& cost_;
  Matrix flow_;
  Vector supply_left_;
  Vector demand_left_;
  Vector potential_;
  Vector dist_;
  std::vector<std::size_t> parent_;
  std::vector<char> done_;
};

}  // namespace

double wasserstein_1d(const EmpiricalDistribution& left, const EmpiricalDistribution& right, double p) {
  check_pair(left, right, p, "wasserstein_1d");
  if (left.dim() != 1) throw Error("wasserstein_1d: inputs must be one-dimensional");
  auto sorted = [](const EmpiricalDistribution& d) {
    std::vector<std::size_t> idx(d.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return d.point(a)[0] < d.point(b)[0]; });
    return idx;
  };
  const auto li = sorted(left);
  const auto ri = sorted(right);
  std::size_t a = 0, b = 0;
  double ra = left.weight(li[0]);
  double rb = right.weight(ri[0]);
  double acc = 0.0;
  while (a < li.size() && b < ri.size()) {
    const double mass = std::min(ra, rb);
    acc += mass * std::pow(std::abs(left.point(li[a])[0] - right.point(ri[b])[0]), p);
    ra -= mass;
    rb -= mass;
    if (ra <= kSaturation && ++a < li.size()) ra = left.weight(li[a]);
    if (rb <= kSaturation && ++b < ri.size()) rb = right.weight(ri[b]);
  }
  return std::pow(std::max(acc, 0.0), 1.0 / p);
}

ExactTransport wasserstein_exact(const EmpiricalDistribution& left, const EmpiricalDistribution& right,
                                 double p) {
  check_pair(left, right, p, "wasserstein_exact");
  if (left.size() * right.size() > kTransportSizeGuard) {
    throw Error("wasserstein_exact: N*M exceeds the exactness guard of " +
                std::to_string(kTransportSizeGuard));
  }
  const Matrix cost = cost_matrix(left, right, p);
  TransportFlow solver(cost, left.weights(), right.weights());
  ExactTransport out;
  out.plan.mass = solver.solve();
  out.plan.p = p;
  double total = 0.0;
  for (std::size_t i = 0; i < cost.rows; ++i) {
    for (std::size_t j = 0; j < cost.cols; ++j) total += out.plan.mass(i, j) * cost(i, j);
  }
  out.distance = std::pow(std::max(total, 0.0), 1.0 / p);
  out.plan.cost = out.distance;
  return out;
}

double wasserstein_bruteforce(const EmpiricalDistribution& left, const EmpiricalDistribution& right,
                              double p) {
  check_pair(left, right, p, "wasserstein_bruteforce");
  if (left.size() != right.size()) throw Error("wasserstein_bruteforce: requires N == M");
  if (left.size() > 8) throw Error("wasserstein_bruteforce: requires N <= 8");
  if (!nearly_uniform(left) || !nearly_uniform(right)) {
    throw Error("wasserstein_bruteforce: requires uniform weights");
  }
  const Matrix cost = cost_matrix(left, right, p);
  std::vector<std::size_t> perm(left.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = kInf;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) s += cost(i, perm[i]);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::pow(best / static_cast<double>(left.size()), 1.0 / p);
}

void write_plan_csv(const std::string& path, const TransportPlan& plan) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "i,j,mass\n";
  for (std::size_t i = 0; i < plan.mass.rows; ++i) {
    for (std::size_t j = 0; j < plan.mass.cols; ++j) {
      if (plan.mass(i, j) > 0.0) out << i << ',' << j << ',' << format_exact(plan.mass(i, j)) << '\n';
    }
  }
}

}  // namespace pcd
