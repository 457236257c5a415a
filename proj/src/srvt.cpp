#include "pcd/srvt.hpp"

#include <cmath>
#include <deque>
#include <limits>

namespace pcd {

double signed_sqrt(double x) {
  if (x > 0.0) return std::sqrt(x);
  if (x < 0.0) return -std::sqrt(-x);
  return 0.0;
}

Vector srvt_forward(std::span<const double> x) {
  Vector y(x.size());
  double prev = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = signed_sqrt(x[i] - prev);
    prev = x[i];
  }
  return y;
}

Vector srvt_inverse(std::span<const double> y) {
  Vector x(y.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    acc += y[i] * std::abs(y[i]);
    x[i] = acc;
  }
  return x;
}

double pullback_norm(std::span<const double> x) {
  double s = 0.0;
  double prev = 0.0;
  for (double v : x) {
    s += std::abs(v - prev);
    prev = v;
  }
  return std::sqrt(s);
}

Vector SrvtBlock::forward(std::span<const double> x) const {
  if (x.size() != n) throw Error("SrvtBlock: input dimension mismatch");
  return srvt_forward(x);
}

Vector SrvtBlock::inverse(std::span<const double> y) const {
  if (y.size() != n) throw Error("SrvtBlock: input dimension mismatch");
  return srvt_inverse(y);
}

std::vector<NeuronSignature> graph_signature(std::size_t n) {
  if (n == 0) throw Error("graph_signature: n must be >= 1");
  // inputs_of[o] lists the inputs wired into output o.
  std::vector<std::vector<std::size_t>> inputs_of(n);
  std::vector<std::vector<std::size_t>> outputs_of(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o : {i, i + 1}) {
      if (o >= n) continue;
      inputs_of[o].push_back(i);
      outputs_of[i].push_back(o);
    }
  }
  std::size_t root = n;
  for (std::size_t o = 0; o < n; ++o) {
    if (inputs_of[o].size() == 1) {
      if (root != n) throw Error("graph_signature: in-degree-1 output is not unique");
      root = o;
    }
  }
  if (root == n) throw Error("graph_signature: no in-degree-1 output");

  // Breadth-first search over outputs; two outputs are adjacent when they share an input.
  constexpr std::size_t kUnseen = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> dist(n, kUnseen);
  std::deque<std::size_t> queue{root};
  dist[root] = 0;
  while (!queue.empty()) {
    const std::size_t o = queue.front();
    queue.pop_front();
    for (std::size_t i : inputs_of[o]) {
      for (std::size_t next : outputs_of[i]) {
        if (dist[next] != kUnseen) continue;
        dist[next] = dist[o] + 1;
        queue.push_back(next);
      }
    }
  }
  std::vector<NeuronSignature> sig(n);
  for (std::size_t o = 0; o < n; ++o) sig[o] = {inputs_of[o].size(), dist[o]};
  return sig;
}

ad::NodeId record_srvt(ad::Tape& tape, ad::NodeId x, double eps, ad::SqrtForward mode) {
  return tape.signed_sqrt(tape.first_diff(x), eps, mode);
}

}  // namespace pcd
