#pragma once

// Reverse-mode differentiation over batched dense networks.
//
// A Tape records matrix-valued nodes in creation order, so node inputs always
// precede the node. backward() seeds a 1x1 output with adjoint one and sweeps
// the tape once in reverse. Leaves are plain values; their adjoints after the
// sweep are the gradients.

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pcd/common.hpp"

namespace pcd::ad {

using NodeId = std::size_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

enum class Op : std::uint8_t {
  kLeaf,
  kAffine,          // X W^T + b
  kMatMul,          // X W
  kSpectralScale,   // W / max(u^T W v, 1e-12), u and v held constant
  kScale,           // c X
  kAdd,             // X + Y, Y may be a 1 x cols row broadcast
  kSub,
  kMul,             // elementwise
  kLeakyRelu,
  kLeakyReluSlope,  // piecewise-constant derivative of leaky ReLU, no gradient
  kAbs,
  kFirstDiff,       // y_i = x_i - x_{i-1} per row, x_0 = 0
  kFirstDiffAdjoint,
  kSignedSqrt,      // sgn(x) sqrt|x|, smoothed derivative
  kSignedSqrtSlope, // 1 / (2 sqrt(|x| + eps))
  kRowNorm,         // B x n -> B x 1
  kRowNormalize,
  kRowSum,          // B x n -> B x 1
  kPower,           // max(x, floor)^e, for x >= 0
  kWeightedSum,     // B x 1 -> 1 x 1, sum_b w_b x_b
};

/// How kSignedSqrt evaluates its forward value.
enum class SqrtForward : std::uint8_t {
  kExact,     // sgn(x) sqrt|x|
  kSmoothed,  // sgn(x) (sqrt(|x| + eps) - sqrt(eps)); derivative equals the backward rule
};

class Tape {
 public:
  /// Leaves that do not require gradients get no adjoint, and neither does any
  /// node computed only from such leaves.
  NodeId leaf(Matrix value, bool requires_grad = true);
  /// Leaf viewing `value` without copying; it must outlive the tape.
  NodeId leaf_ref(const Matrix& value, bool requires_grad = true);
  NodeId scalar(double value);

  NodeId affine(NodeId x, NodeId w, NodeId bias = kNoNode);
  NodeId matmul(NodeId x, NodeId w);
  NodeId spectral_scale(NodeId w, Vector u, Vector v);
  NodeId scale(NodeId x, double c);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId leaky_relu(NodeId x, double slope);
  NodeId leaky_relu_slope(NodeId x, double slope);
  NodeId abs(NodeId x);
  NodeId first_diff(NodeId x);
  NodeId first_diff_adjoint(NodeId x);
  NodeId signed_sqrt(NodeId x, double eps, SqrtForward mode = SqrtForward::kExact);
  NodeId signed_sqrt_slope(NodeId x, double eps);
  NodeId row_norm(NodeId x);
  NodeId row_normalize(NodeId x);
  NodeId row_sum(NodeId x);
  NodeId power(NodeId x, double exponent, double floor = 0.0);
  NodeId weighted_sum(NodeId x, Vector weights);
  NodeId mean(NodeId x);

  const Matrix& value(NodeId id) const;
  /// Moves a value out of the tape; later use of the node is invalid.
  Matrix take_value(NodeId id);
  double scalar_value(NodeId id) const;
  bool requires_grad(NodeId id) const { return nodes_.at(id).grad; }

  /// Reverse sweep from a 1x1 node. Throws if the node is not scalar.
  void backward(NodeId output);
  /// Empty for nodes that do not require gradients.
  const Matrix& adjoint(NodeId id) const;
  Matrix take_adjoint(NodeId id);

  std::size_t size() const { return nodes_.size(); }
  Op op(NodeId id) const { return nodes_.at(id).op; }

 private:
  struct Node {
    Op op = Op::kLeaf;
    NodeId a = kNoNode;
    NodeId b = kNoNode;
    NodeId c = kNoNode;
    double param = 0.0;
    double param2 = 0.0;
    bool grad = true;
    const Matrix* ref = nullptr;
    Vector aux1;
    Vector aux2;
    Matrix value;
  };

  NodeId push(Node node);
  const Matrix& val(NodeId id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.value;
  }
  bool wants(NodeId id) const { return id != kNoNode && nodes_[id].grad; }
  void backprop_node(NodeId id);

  std::vector<Node> nodes_;
  std::vector<Matrix> adjoints_;
};

// ---------------------------------------------------------------------------
// Dense networks

enum class Activation : std::uint8_t { kLeakyRelu, kIdentity };

inline constexpr double kLeakySlope = 0.2;

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::kIdentity;
  Vector sn_u;    // persistent left singular vector estimate (out)

  std::size_t in_dim() const { return weight.cols; }
  std::size_t out_dim() const { return weight.rows; }
};

/// Stack of dense layers. When `spectral` is set every layer weight is divided
/// by its power-iteration spectral norm inside the forward pass.
struct Mlp {
  std::vector<DenseLayer> layers;
  bool spectral = false;

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }
  std::size_t parameter_count() const;
};

/// Hidden layers use leaky ReLU(0.2), the last layer is linear. Weights and
/// biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); sn_u is a unit Gaussian draw.
Mlp make_mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, bool spectral,
             Rng& rng);

Vector random_unit_vector(std::size_t n, Rng& rng);

struct SpectralEstimate {
  double sigma = 0.0;
  Vector u;  // left singular vector estimate (rows)
  Vector v;  // right singular vector estimate (cols)
};

/// Power iteration from u0 (must have `rows` entries). A zero matrix yields
/// sigma = 0 with u unchanged.
SpectralEstimate spectral_norm(const Matrix& weight, int iters, std::span<const double> u0);

/// Copy of the layer with weight / max(sigma, 1e-12) and the refreshed u.
DenseLayer normalize_layer(const DenseLayer& layer, int iters = 1);

/// Runs power iteration on every layer of a spectral network, stores the new u
/// in the layers, and returns the estimates used by the forward pass.
std::vector<SpectralEstimate> refresh_spectral_state(Mlp& net, int iters);

/// Same estimates without touching the stored state.
std::vector<SpectralEstimate> spectral_estimates(const Mlp& net, int iters);

/// Largest singular triple from a dense SVD. Power iteration stalls on the flat
/// spectra that adversarial training produces, so certified evaluation uses
/// this instead.
SpectralEstimate exact_spectral_norm(const Matrix& weight);
std::vector<SpectralEstimate> exact_spectral_estimates(const Mlp& net);

/// Node ids of one network evaluation on a tape.
struct MlpGraph {
  NodeId input = kNoNode;
  NodeId output = kNoNode;
  std::vector<NodeId> weights;            // raw weight leaves
  std::vector<NodeId> biases;
  std::vector<NodeId> effective_weights;  // after spectral scaling (== weights otherwise)
  std::vector<NodeId> pre_activations;
};

/// Records the network on `tape`. `normalization` must hold one estimate per
/// layer when net.spectral is set and is ignored otherwise.
struct RecordOptions {
  bool params_require_grad = true;
  bool reference_params = false;  // view the weights in place; net must outlive the tape
};

MlpGraph record_mlp(Tape& tape, const Mlp& net, NodeId input,
                    std::span<const SpectralEstimate> normalization, RecordOptions opts = {});

/// Self-contained forward evaluation: a fresh tape with the input as a leaf.
struct ForwardPass {
  Tape tape;
  MlpGraph graph;
  const Matrix& output() const { return tape.value(graph.output); }
};

ForwardPass forward(const Mlp& net, const Matrix& x,
                    std::span<const SpectralEstimate> normalization = {});

/// Gradient container shaped like the network parameters.
struct MlpGradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
};

MlpGradients zero_gradients(const Mlp& net);
MlpGradients collect_gradients(const Tape& tape, const MlpGraph& graph);
/// Same, moving the adjoints out of the tape.
MlpGradients take_gradients(Tape& tape, const MlpGraph& graph);

/// Reverse sweep from the scalar `output` node and extraction of parameter and
/// input gradients.
struct Gradients {
  MlpGradients params;
  Matrix input;
};
Gradients backward(Tape& tape, const MlpGraph& graph, NodeId output);

// ---------------------------------------------------------------------------
// Adam

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;
};

struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<Vector> first;   // one accumulator per parameter tensor
  std::vector<Vector> second;
};

AdamState make_adam(const Mlp& net, AdamHyper hyper = {});

/// Bias-corrected Adam descent step: params -= lr * mhat / (sqrt(vhat) + eps).
/// Callers maximizing an objective pass the negated gradient.
void adam_step(AdamState& state, std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads);
void adam_step(AdamState& state, Mlp& net, const MlpGradients& grads);

/// Clamps every weight entry to [-c, c] (comparison mode only).
void clip_weights(Mlp& net, double c);

// ---------------------------------------------------------------------------
// Checkpoints: "PCDCKPT1\n", one line of JSON describing the networks, then
// the float64 parameters little-endian in header order.

struct NamedNetwork {
  std::string name;
  Mlp net;
};

void write_checkpoint(const std::string& path, const std::vector<NamedNetwork>& nets);
std::vector<NamedNetwork> read_checkpoint(const std::string& path);

}  // namespace pcd::ad
