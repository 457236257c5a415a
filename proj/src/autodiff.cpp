#include "pcd/autodiff.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <Eigen/SVD>
#include <json.hpp>

#include "pcd/kernels.hpp"

namespace pcd::ad {
namespace {

constexpr double kSigmaFloor = 1e-12;

void require(bool ok, const char* msg) {
  if (!ok) throw Error(msg);
}

double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

// ---------------------------------------------------------------------------
// Tape construction

NodeId Tape::push(Node node) {
  if (node.op != Op::kLeaf) {
    node.grad = node.op != Op::kLeakyReluSlope && (wants(node.a) || wants(node.b) || wants(node.c));
  }
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

NodeId Tape::leaf(Matrix value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.grad = requires_grad;
  return push(std::move(n));
}

NodeId Tape::leaf_ref(const Matrix& value, bool requires_grad) {
  Node n;
  n.ref = &value;
  n.grad = requires_grad;
  return push(std::move(n));
}

Matrix Tape::take_value(NodeId id) {
  require(id < nodes_.size(), "Tape::take_value: unknown node");
  Node& n = nodes_[id];
  return n.ref ? *n.ref : std::move(n.value);
}

const Matrix& Tape::value(NodeId id) const {
  require(id < nodes_.size(), "Tape::value: unknown node");
  return val(id);
}

NodeId Tape::scalar(double value) { return leaf(Matrix(1, 1, value)); }

double Tape::scalar_value(NodeId id) const {
  const Matrix& m = value(id);
  require(m.rows == 1 && m.cols == 1, "Tape::scalar_value: node is not 1x1");
  return m.data[0];
}

NodeId Tape::affine(NodeId x, NodeId w, NodeId bias) {
  const Matrix& X = val(x);
  const Matrix& W = val(w);
  require(X.cols == W.cols, "affine: input width does not match weight columns");
  if (bias != kNoNode) require(val(bias).size() == W.rows, "affine: bias size mismatch");
  Node n;
  n.op = Op::kAffine;
  n.a = x;
  n.b = w;
  n.c = bias;
  n.value = Matrix(X.rows, W.rows);
  kernels::gemm_abt(X.data.data(), W.data.data(), bias == kNoNode ? nullptr : val(bias).data.data(),
                    n.value.data.data(), X.rows, X.cols, W.rows);
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId x, NodeId w) {
  const Matrix& X = val(x);
  const Matrix& W = val(w);
  require(X.cols == W.rows, "matmul: inner dimensions differ");
  Node n;
  n.op = Op::kMatMul;
  n.a = x;
  n.b = w;
  n.value = Matrix(X.rows, W.cols);
  kernels::gemm_ab_acc(X.data.data(), W.data.data(), n.value.data.data(), X.rows, X.cols, W.cols);
  return push(std::move(n));
}

NodeId Tape::spectral_scale(NodeId w, Vector u, Vector v) {
  const Matrix& W = val(w);
  require(u.size() == W.rows && v.size() == W.cols, "spectral_scale: singular vector size mismatch");
  double sigma = 0.0;
  for (std::size_t r = 0; r < W.rows; ++r) sigma += u[r] * kernels::dot(W.row(r).data(), v.data(), W.cols);
  Node n;
  n.op = Op::kSpectralScale;
  n.a = w;
  n.param = std::max(sigma, kSigmaFloor);
  n.param2 = sigma > kSigmaFloor ? 1.0 : 0.0;
  n.aux1 = std::move(u);
  n.aux2 = std::move(v);
  n.value = W;
  for (double& e : n.value.data) e /= n.param;
  return push(std::move(n));
}

NodeId Tape::scale(NodeId x, double c) {
  Node n;
  n.op = Op::kScale;
  n.a = x;
  n.param = c;
  n.value = val(x);
  for (double& e : n.value.data) e *= c;
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Matrix& A = val(a);
  const Matrix& B = val(b);
  const bool broadcast = B.rows == 1 && A.rows != 1 && B.cols == A.cols;
  require(A.same_shape(B) || broadcast, "add: shape mismatch");
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.value = A;
  for (std::size_t r = 0; r < A.rows; ++r) {
    for (std::size_t c = 0; c < A.cols; ++c) n.value(r, c) += broadcast ? B(0, c) : B(r, c);
  }
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const Matrix& A = val(a);
  const Matrix& B = val(b);
  const bool broadcast = B.rows == 1 && A.rows != 1 && B.cols == A.cols;
  require(A.same_shape(B) || broadcast, "sub: shape mismatch");
  Node n;
  n.op = Op::kSub;
  n.a = a;
  n.b = b;
  n.value = A;
  for (std::size_t r = 0; r < A.rows; ++r) {
    for (std::size_t c = 0; c < A.cols; ++c) n.value(r, c) -= broadcast ? B(0, c) : B(r, c);
  }
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const Matrix& A = val(a);
  const Matrix& B = val(b);
  require(A.same_shape(B), "mul: shape mismatch");
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  n.value = A;
  for (std::size_t i = 0; i < A.size(); ++i) n.value.data[i] *= B.data[i];
  return push(std::move(n));
}

NodeId Tape::leaky_relu(NodeId x, double slope) {
  Node n;
  n.op = Op::kLeakyRelu;
  n.a = x;
  n.param = slope;
  n.value = val(x);
  for (double& e : n.value.data) e = e > 0.0 ? e : slope * e;
  return push(std::move(n));
}

NodeId Tape::leaky_relu_slope(NodeId x, double slope) {
  Node n;
  n.op = Op::kLeakyReluSlope;
  n.a = x;
  n.param = slope;
  n.value = val(x);
  for (double& e : n.value.data) e = e > 0.0 ? 1.0 : slope;
  return push(std::move(n));
}

NodeId Tape::abs(NodeId x) {
  Node n;
  n.op = Op::kAbs;
  n.a = x;
  n.value = val(x);
  for (double& e : n.value.data) e = std::abs(e);
  return push(std::move(n));
}

NodeId Tape::first_diff(NodeId x) {
  const Matrix& X = val(x);
  Node n;
  n.op = Op::kFirstDiff;
  n.a = x;
  n.value = Matrix(X.rows, X.cols);
  for (std::size_t r = 0; r < X.rows; ++r) {
    double prev = 0.0;
    for (std::size_t c = 0; c < X.cols; ++c) {
      n.value(r, c) = X(r, c) - prev;
      prev = X(r, c);
    }
  }
  return push(std::move(n));
}

NodeId Tape::first_diff_adjoint(NodeId x) {
  const Matrix& X = val(x);
  Node n;
  n.op = Op::kFirstDiffAdjoint;
  n.a = x;
  n.value = Matrix(X.rows, X.cols);
  for (std::size_t r = 0; r < X.rows; ++r) {
    for (std::size_t c = 0; c < X.cols; ++c) {
      n.value(r, c) = X(r, c) - (c + 1 < X.cols ? X(r, c + 1) : 0.0);
    }
  }
  return push(std::move(n));
}

NodeId Tape::signed_sqrt(NodeId x, double eps, SqrtForward mode) {
  Node n;
  n.op = Op::kSignedSqrt;
  n.a = x;
  n.param = eps;
  n.value = val(x);
  const double root_eps = std::sqrt(eps);
  for (double& e : n.value.data) {
    e = mode == SqrtForward::kExact ? sgn(e) * std::sqrt(std::abs(e))
                                    : sgn(e) * (std::sqrt(std::abs(e) + eps) - root_eps);
  }
  return push(std::move(n));
}

NodeId Tape::signed_sqrt_slope(NodeId x, double eps) {
  Node n;
  n.op = Op::kSignedSqrtSlope;
  n.a = x;
  n.param = eps;
  n.value = val(x);
  for (double& e : n.value.data) e = 0.5 / std::sqrt(std::abs(e) + eps);
  return push(std::move(n));
}

NodeId Tape::row_norm(NodeId x) {
  const Matrix& X = val(x);
  Node n;
  n.op = Op::kRowNorm;
  n.a = x;
  n.value = Matrix(X.rows, 1);
  for (std::size_t r = 0; r < X.rows; ++r) n.value.data[r] = norm2(X.row(r));
  return push(std::move(n));
}

NodeId Tape::row_normalize(NodeId x) {
  const Matrix& X = val(x);
  Node n;
  n.op = Op::kRowNormalize;
  n.a = x;
  n.value = X;
  n.aux1.resize(X.rows);
  for (std::size_t r = 0; r < X.rows; ++r) {
    const double len = norm2(X.row(r));
    n.aux1[r] = len;
    for (double& e : n.value.row(r)) e = len > 0.0 ? e / len : 0.0;
  }
  return push(std::move(n));
}

NodeId Tape::row_sum(NodeId x) {
  const Matrix& X = val(x);
  Node n;
  n.op = Op::kRowSum;
  n.a = x;
  n.value = Matrix(X.rows, 1);
  for (std::size_t r = 0; r < X.rows; ++r) {
    double s = 0.0;
    for (double e : X.row(r)) s += e;
    n.value.data[r] = s;
  }
  return push(std::move(n));
}

NodeId Tape::power(NodeId x, double exponent, double floor) {
  Node n;
  n.op = Op::kPower;
  n.a = x;
  n.param = exponent;
  n.param2 = floor;
  n.value = val(x);
  for (double& e : n.value.data) {
    require(e >= 0.0 || e < floor || floor > 0.0, "power: negative base");
    e = std::pow(std::max(e, floor), exponent);
  }
  return push(std::move(n));
}

NodeId Tape::weighted_sum(NodeId x, Vector weights) {
  const Matrix& X = val(x);
  require(X.cols == 1 && weights.size() == X.rows, "weighted_sum: expects a column with one weight per row");
  Node n;
  n.op = Op::kWeightedSum;
  n.a = x;
  double s = 0.0;
  for (std::size_t r = 0; r < X.rows; ++r) s += weights[r] * X.data[r];
  n.aux1 = std::move(weights);
  n.value = Matrix(1, 1, s);
  return push(std::move(n));
}

NodeId Tape::mean(NodeId x) {
  const std::size_t rows = val(x).rows;
  return weighted_sum(x, Vector(rows, 1.0 / static_cast<double>(rows)));
}

// ---------------------------------------------------------------------------
// Reverse sweep

const Matrix& Tape::adjoint(NodeId id) const {
  require(id < adjoints_.size(), "Tape::adjoint: backward has not run");
  return adjoints_[id];
}

Matrix Tape::take_adjoint(NodeId id) {
  require(id < adjoints_.size(), "Tape::take_adjoint: backward has not run");
  return std::move(adjoints_[id]);
}

void Tape::backward(NodeId output) {
  require(output < nodes_.size(), "backward: unknown node");
  require(val(output).rows == 1 && val(output).cols == 1, "backward: output must be scalar");
  adjoints_.assign(nodes_.size(), Matrix());
  if (!nodes_[output].grad) return;
  for (NodeId id = 0; id <= output; ++id) {
    if (nodes_[id].grad) adjoints_[id] = Matrix(val(id).rows, val(id).cols);
  }
  adjoints_[output].data[0] = 1.0;
  for (NodeId id = output + 1; id-- > 0;) {
    if (nodes_[id].grad) backprop_node(id);
  }
}

void Tape::backprop_node(NodeId id) {
  const Node& n = nodes_[id];
  const Matrix& g = adjoints_[id];
  switch (n.op) {
    case Op::kLeaf:
    case Op::kLeakyReluSlope:
      return;
    case Op::kAffine: {
      const Matrix& X = val(n.a);
      const Matrix& W = val(n.b);
      if (wants(n.a)) {
        kernels::gemm_ab_acc(g.data.data(), W.data.data(), adjoints_[n.a].data.data(), X.rows, W.rows, W.cols);
      }
      if (wants(n.b)) {
        kernels::gemm_atb_acc(g.data.data(), X.data.data(), adjoints_[n.b].data.data(), X.rows, W.rows, W.cols);
      }
      if (wants(n.c)) {
        double* db = adjoints_[n.c].data.data();
        for (std::size_t r = 0; r < g.rows; ++r) {
          for (std::size_t c = 0; c < g.cols; ++c) db[c] += g(r, c);
        }
      }
      return;
    }
    case Op::kMatMul: {
      const Matrix& X = val(n.a);
      const Matrix& W = val(n.b);
      if (wants(n.a)) {
        Matrix dx(X.rows, X.cols);
        kernels::gemm_abt(g.data.data(), W.data.data(), nullptr, dx.data.data(), g.rows, g.cols, W.rows);
        Matrix& ax = adjoints_[n.a];
        for (std::size_t i = 0; i < dx.size(); ++i) ax.data[i] += dx.data[i];
      }
      if (wants(n.b)) {
        kernels::gemm_atb_acc(X.data.data(), g.data.data(), adjoints_[n.b].data.data(), X.rows, X.cols, W.cols);
      }
      return;
    }
    case Op::kSpectralScale: {
      const Matrix& W = val(n.a);
      Matrix& aw = adjoints_[n.a];
      const double sigma = n.param;
      double inner = 0.0;
      for (std::size_t i = 0; i < W.size(); ++i) inner += g.data[i] * W.data[i];
      const double coupling = n.param2 > 0.0 ? inner / (sigma * sigma) : 0.0;
      for (std::size_t r = 0; r < W.rows; ++r) {
        for (std::size_t c = 0; c < W.cols; ++c) {
          aw(r, c) += g(r, c) / sigma - coupling * n.aux1[r] * n.aux2[c];
        }
      }
      return;
    }
    case Op::kScale: {
      Matrix& a = adjoints_[n.a];
      for (std::size_t i = 0; i < g.size(); ++i) a.data[i] += n.param * g.data[i];
      return;
    }
    case Op::kAdd:
    case Op::kSub: {
      const double sign = n.op == Op::kAdd ? 1.0 : -1.0;
      if (wants(n.a)) {
        Matrix& a = adjoints_[n.a];
        for (std::size_t i = 0; i < g.size(); ++i) a.data[i] += g.data[i];
      }
      if (wants(n.b)) {
        Matrix& b = adjoints_[n.b];
        if (b.same_shape(g)) {
          for (std::size_t i = 0; i < g.size(); ++i) b.data[i] += sign * g.data[i];
        } else {
          for (std::size_t r = 0; r < g.rows; ++r) {
            for (std::size_t c = 0; c < g.cols; ++c) b.data[c] += sign * g(r, c);
          }
        }
      }
      return;
    }
    case Op::kMul: {
      const Matrix& A = val(n.a);
      const Matrix& B = val(n.b);
      if (wants(n.a)) {
        Matrix& a = adjoints_[n.a];
        for (std::size_t i = 0; i < g.size(); ++i) a.data[i] += g.data[i] * B.data[i];
      }
      if (wants(n.b)) {
        Matrix& b = adjoints_[n.b];
        for (std::size_t i = 0; i < g.size(); ++i) b.data[i] += g.data[i] * A.data[i];
      }
      return;
    }
    case Op::kLeakyRelu: {
      const Matrix& X = val(n.a);
      Matrix& a = adjoints_[n.a];
      for (std::size_t i = 0; i < g.size(); ++i) a.data[i] += g.data[i] * (X.data[i] > 0.0 ? 1.0 : n.param);
      return;
    }
    case Op::kAbs: {
      const Matrix& X = val(n.a);
      Matrix& a = adjoints_[n.a];
      for (std::size_t i = 0; i < g.size(); ++i) a.data[i] += g.data[i] * sgn(X.data[i]);
      return;
    }
    case Op::kFirstDiff: {
      Matrix& a = adjoints_[n.a];
      for (std::size_t r = 0; r < g.rows; ++r) {
        for (std::size_t c = 0; c < g.cols; ++c) {
          a(r, c) += g(r, c) - (c + 1 < g.cols ? g(r, c + 1) : 0.0);
        }
      }
      return;
    }
    case Op::kFirstDiffAdjoint: {
      Matrix& a = adjoints_[n.a];
      for (std::size_t r = 0; r < g.rows; ++r) {
        for (std::size_t c = 0; c < g.cols; ++c) a(r, c) += g(r, c) - (c > 0 ? g(r, c - 1) : 0.0);
      }
      return;
    }
    case Op::kSignedSqrt: {
      const Matrix& X = val(n.a);
      Matrix& a = adjoints_[n.a];
      for (std::size_t i = 0; i < g.size(); ++i) {
        a.data[i] += g.data[i] * 0.5 / std::sqrt(std::abs(X.data[i]) + n.param);
      }
      return;
    }
    case Op::kSignedSqrtSlope: {
      const Matrix& X = val(n.a);
      Matrix& a = adjoints_[n.a];
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double t = std::abs(X.data[i]) + n.param;
        a.data[i] += g.data[i] * (-0.25 * sgn(X.data[i]) / (t * std::sqrt(t)));
      }
      return;
    }
    case Op::kRowNorm: {
      const Matrix& X = val(n.a);
      Matrix& a = adjoints_[n.a];
      for (std::size_t r = 0; r < X.rows; ++r) {
        const double len = n.value.data[r];
        if (len <= 0.0) continue;
        kernels::axpy(g.data[r] / len, X.row(r).data(), a.row(r).data(), X.cols);
      }
      return;
    }
    case Op::kRowNormalize: {
      Matrix& a = adjoints_[n.a];
      for (std::size_t r = 0; r < g.rows; ++r) {
        const double len = n.aux1[r];
        if (len <= 0.0) continue;
        const auto y = n.value.row(r);
        const auto gy = g.row(r);
        double proj = 0.0;
        for (std::size_t c = 0; c < g.cols; ++c) proj += y[c] * gy[c];
        for (std::size_t c = 0; c < g.cols; ++c) a(r, c) += (gy[c] - y[c] * proj) / len;
      }
      return;
    }
    case Op::kRowSum: {
      Matrix& a = adjoints_[n.a];
      for (std::size_t r = 0; r < a.rows; ++r) {
        for (double& e : a.row(r)) e += g.data[r];
      }
      return;
    }
    case Op::kPower: {
      const Matrix& X = val(n.a);
      Matrix& a = adjoints_[n.a];
      const double e = n.param;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = X.data[i];
        if (x < n.param2 || (x == 0.0 && e < 1.0)) continue;
        a.data[i] += g.data[i] * e * std::pow(x, e - 1.0);
      }
      return;
    }
    case Op::kWeightedSum: {
      Matrix& a = adjoints_[n.a];
      for (std::size_t r = 0; r < a.rows; ++r) a.data[r] += n.aux1[r] * g.data[0];
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Networks

std::string to_string(Activation a) {
  return a == Activation::kLeakyRelu ? "leaky_relu" : "identity";
}

Activation activation_from_string(const std::string& s) {
  if (s == "leaky_relu") return Activation::kLeakyRelu;
  if (s == "identity") return Activation::kIdentity;
  throw Error("unknown activation tag '" + s + "'");
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

Vector random_unit_vector(std::size_t n, Rng& rng) {
  Vector u(n);
  double len = 0.0;
  while (len == 0.0) {
    for (double& e : u) e = gaussian(rng);
    len = norm2(u);
  }
  for (double& e : u) e /= len;
  return u;
}

Mlp make_mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, bool spectral,
             Rng& rng) {
  require(in > 0 && out > 0, "make_mlp: dimensions must be positive");
  Mlp net;
  net.spectral = spectral;
  std::size_t prev = in;
  for (std::size_t i = 0; i <= hidden.size(); ++i) {
    const std::size_t width = i < hidden.size() ? hidden[i] : out;
    require(width > 0, "make_mlp: zero-width layer");
    DenseLayer layer;
    layer.weight = Matrix(width, prev);
    layer.bias.assign(width, 0.0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(prev));
    for (double& w : layer.weight.data) w = bound * (2.0 * uniform01(rng) - 1.0);
    for (double& b : layer.bias) b = bound * (2.0 * uniform01(rng) - 1.0);
    layer.activation = i < hidden.size() ? Activation::kLeakyRelu : Activation::kIdentity;
    layer.sn_u = random_unit_vector(width, rng);
    net.layers.push_back(std::move(layer));
    prev = width;
  }
  return net;
}

SpectralEstimate spectral_norm(const Matrix& weight, int iters, std::span<const double> u0) {
  require(iters >= 1, "spectral_norm: iters must be >= 1");
  require(u0.size() == weight.rows, "spectral_norm: u has wrong size");
  SpectralEstimate est;
  est.u.assign(u0.begin(), u0.end());
  const double u_len = norm2(est.u);
  require(u_len > 0.0, "spectral_norm: u must be nonzero");
  Vector u(u0.begin(), u0.end());
  for (double& e : u) e /= u_len;
  Vector v(weight.cols);
  for (int it = 0; it < iters; ++it) {
    std::fill(v.begin(), v.end(), 0.0);
    for (std::size_t r = 0; r < weight.rows; ++r) kernels::axpy(u[r], weight.row(r).data(), v.data(), weight.cols);
    const double v_len = norm2(v);
    if (v_len == 0.0) {
      est.sigma = 0.0;
      est.v.assign(weight.cols, 0.0);
      return est;
    }
    for (double& e : v) e /= v_len;
    for (std::size_t r = 0; r < weight.rows; ++r) u[r] = kernels::dot(weight.row(r).data(), v.data(), weight.cols);
    const double len = norm2(u);
    if (len == 0.0) {
      est.sigma = 0.0;
      est.v.assign(weight.cols, 0.0);
      return est;
    }
    for (double& e : u) e /= len;
  }
  double sigma = 0.0;
  for (std::size_t r = 0; r < weight.rows; ++r) sigma += u[r] * kernels::dot(weight.row(r).data(), v.data(), weight.cols);
  est.sigma = sigma;
  est.u = std::move(u);
  est.v = std::move(v);
  return est;
}

DenseLayer normalize_layer(const DenseLayer& layer, int iters) {
  require(layer.sn_u.size() == layer.out_dim(), "normalize_layer: missing sn_state");
  const SpectralEstimate est = spectral_norm(layer.weight, iters, layer.sn_u);
  DenseLayer out = layer;
  const double sigma = std::max(est.sigma, kSigmaFloor);
  for (double& w : out.weight.data) w /= sigma;
  out.sn_u = est.u;
  return out;
}

std::vector<SpectralEstimate> spectral_estimates(const Mlp& net, int iters) {
  std::vector<SpectralEstimate> out;
  out.reserve(net.layers.size());
  for (const auto& layer : net.layers) out.push_back(spectral_norm(layer.weight, iters, layer.sn_u));
  return out;
}

SpectralEstimate exact_spectral_norm(const Matrix& weight) {
  require(weight.size() > 0, "exact_spectral_norm: empty matrix");
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMajor> w(weight.data.data(), static_cast<Eigen::Index>(weight.rows),
                                     static_cast<Eigen::Index>(weight.cols));
  const Eigen::BDCSVD<Eigen::MatrixXd> svd(w, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SpectralEstimate est;
  est.sigma = svd.singularValues()(0);
  est.u.resize(weight.rows);
  est.v.resize(weight.cols);
  for (std::size_t i = 0; i < weight.rows; ++i) est.u[i] = svd.matrixU()(static_cast<Eigen::Index>(i), 0);
  for (std::size_t j = 0; j < weight.cols; ++j) est.v[j] = svd.matrixV()(static_cast<Eigen::Index>(j), 0);
  return est;
}

std::vector<SpectralEstimate> exact_spectral_estimates(const Mlp& net) {
  std::vector<SpectralEstimate> out;
  out.reserve(net.layers.size());
  for (const auto& layer : net.layers) out.push_back(exact_spectral_norm(layer.weight));
  return out;
}

std::vector<SpectralEstimate> refresh_spectral_state(Mlp& net, int iters) {
  auto est = spectral_estimates(net, iters);
  for (std::size_t i = 0; i < net.layers.size(); ++i) net.layers[i].sn_u = est[i].u;
  return est;
}

MlpGraph record_mlp(Tape& tape, const Mlp& net, NodeId input, std::span<const SpectralEstimate> normalization,
                    RecordOptions opts) {
  require(!net.layers.empty(), "record_mlp: empty network");
  if (net.spectral) require(normalization.size() == net.layers.size(), "record_mlp: missing spectral estimates");
  MlpGraph g;
  g.input = input;
  NodeId h = input;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const DenseLayer& layer = net.layers[i];
    if (i > 0) require(layer.in_dim() == net.layers[i - 1].out_dim(), "record_mlp: layer shapes do not chain");
    const NodeId w = opts.reference_params ? tape.leaf_ref(layer.weight, opts.params_require_grad)
                                           : tape.leaf(layer.weight, opts.params_require_grad);
    Matrix bias(1, layer.bias.size());
    bias.data = layer.bias;
    const NodeId b = tape.leaf(std::move(bias), opts.params_require_grad);
    const NodeId w_eff =
        net.spectral ? tape.spectral_scale(w, normalization[i].u, normalization[i].v) : w;
    const NodeId z = tape.affine(h, w_eff, b);
    h = layer.activation == Activation::kLeakyRelu ? tape.leaky_relu(z, kLeakySlope) : z;
    g.weights.push_back(w);
    g.biases.push_back(b);
    g.effective_weights.push_back(w_eff);
    g.pre_activations.push_back(z);
  }
  g.output = h;
  return g;
}

ForwardPass forward(const Mlp& net, const Matrix& x, std::span<const SpectralEstimate> normalization) {
  require(!net.layers.empty(), "forward: empty network");
  require(x.cols == net.in_dim(), "forward: input width does not match the network");
  ForwardPass pass;
  const NodeId in = pass.tape.leaf(x);
  pass.graph = record_mlp(pass.tape, net, in, normalization);
  return pass;
}

MlpGradients zero_gradients(const Mlp& net) {
  MlpGradients g;
  for (const auto& l : net.layers) {
    g.weights.emplace_back(l.weight.rows, l.weight.cols);
    g.biases.emplace_back(l.bias.size(), 0.0);
  }
  return g;
}

MlpGradients collect_gradients(const Tape& tape, const MlpGraph& graph) {
  MlpGradients g;
  for (std::size_t i = 0; i < graph.weights.size(); ++i) {
    g.weights.push_back(tape.adjoint(graph.weights[i]));
    g.biases.push_back(tape.adjoint(graph.biases[i]).data);
  }
  return g;
}

MlpGradients take_gradients(Tape& tape, const MlpGraph& graph) {
  MlpGradients g;
  for (std::size_t i = 0; i < graph.weights.size(); ++i) {
    g.weights.push_back(tape.take_adjoint(graph.weights[i]));
    g.biases.push_back(tape.take_adjoint(graph.biases[i]).data);
  }
  return g;
}

Gradients backward(Tape& tape, const MlpGraph& graph, NodeId output) {
  tape.backward(output);
  Gradients out;
  out.params = collect_gradients(tape, graph);
  out.input = tape.adjoint(graph.input);
  return out;
}

// ---------------------------------------------------------------------------
// Adam

AdamState make_adam(const Mlp& net, AdamHyper hyper) {
  AdamState s;
  s.hyper = hyper;
  for (const auto& l : net.layers) {
    s.first.emplace_back(l.weight.size(), 0.0);
    s.second.emplace_back(l.weight.size(), 0.0);
    s.first.emplace_back(l.bias.size(), 0.0);
    s.second.emplace_back(l.bias.size(), 0.0);
  }
  return s;
}

void adam_step(AdamState& state, std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads) {
  require(params.size() == grads.size() && params.size() == state.first.size(),
          "adam_step: parameter/gradient/state count mismatch");
  for (std::size_t t = 0; t < params.size(); ++t) {
    require(params[t].size() == grads[t].size() && params[t].size() == state.first[t].size(),
            "adam_step: tensor shape mismatch");
  }
  const AdamHyper& h = state.hyper;
  ++state.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    Vector& m = state.first[t];
    Vector& v = state.second[t];
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double g = grads[t][i];
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
      params[t][i] -= h.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + h.eps);
    }
  }
}

void adam_step(AdamState& state, Mlp& net, const MlpGradients& grads) {
  require(grads.weights.size() == net.layers.size(), "adam_step: gradient/layer count mismatch");
  std::vector<std::span<double>> params;
  std::vector<std::span<const double>> gs;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    params.emplace_back(net.layers[i].weight.data);
    gs.emplace_back(grads.weights[i].data);
    params.emplace_back(net.layers[i].bias);
    gs.emplace_back(grads.biases[i]);
  }
  adam_step(state, params, gs);
}

void clip_weights(Mlp& net, double c) {
  for (auto& l : net.layers) {
    for (double& w : l.weight.data) w = std::clamp(w, -c, c);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointMagic = "PCDCKPT1";

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

double get_f64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw Error("checkpoint: truncated parameter block");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void write_checkpoint(const std::string& path, const std::vector<NamedNetwork>& nets) {
  nlohmann::json header;
  header["format"] = "pcd-checkpoint";
  header["version"] = 1;
  header["byte_order"] = "little";
  std::size_t total = 0;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [name, net] : nets) {
    nlohmann::json jn;
    jn["name"] = name;
    jn["spectral"] = net.spectral;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : net.layers) {
      layers.push_back({{"in", l.in_dim()},
                        {"out", l.out_dim()},
                        {"activation", to_string(l.activation)},
                        {"sn_u", l.sn_u}});
    }
    jn["layers"] = std::move(layers);
    list.push_back(std::move(jn));
    total += net.parameter_count();
  }
  header["networks"] = std::move(list);
  header["parameter_count"] = total;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << kCheckpointMagic << '\n' << header.dump() << '\n';
  for (const auto& nn : nets) {
    for (const auto& l : nn.net.layers) {
      for (double w : l.weight.data) put_f64(out, w);
      for (double b : l.bias) put_f64(out, b);
    }
  }
}

std::vector<NamedNetwork> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::string magic, header_line;
  std::getline(in, magic);
  if (magic != kCheckpointMagic) throw Error("checkpoint: bad magic in " + path);
  std::getline(in, header_line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: malformed header: ") + e.what());
  }
  std::vector<NamedNetwork> nets;
  try {
    for (const auto& jn : header.at("networks")) {
      NamedNetwork nn;
      nn.name = jn.at("name").get<std::string>();
      nn.net.spectral = jn.at("spectral").get<bool>();
      for (const auto& jl : jn.at("layers")) {
        DenseLayer l;
        const auto rows = jl.at("out").get<std::size_t>();
        const auto cols = jl.at("in").get<std::size_t>();
        l.weight = Matrix(rows, cols);
        l.bias.assign(rows, 0.0);
        l.activation = activation_from_string(jl.at("activation").get<std::string>());
        l.sn_u = jl.at("sn_u").get<Vector>();
        nn.net.layers.push_back(std::move(l));
      }
      nets.push_back(std::move(nn));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: malformed header: ") + e.what());
  }
  for (auto& nn : nets) {
    for (auto& l : nn.net.layers) {
      for (double& w : l.weight.data) w = get_f64(in);
      for (double& b : l.bias) b = get_f64(in);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error("checkpoint: trailing bytes in " + path);
  return nets;
}

}  // namespace pcd::ad
