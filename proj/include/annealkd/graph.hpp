#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "annealkd/precision.hpp"
#include "annealkd/tensor.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace autograd {

struct NodeId {
  std::uint32_t index = 0;
  friend auto operator<=>(NodeId, NodeId) = default;
};

enum class OpKind : std::uint8_t {
  Constant,
  Parameter,
  MatMul,
  Add,
  Conv2d,
  Relu,
  Sigmoid,
  Mse,
  Scale,
  Mean,
  Sum,
  LogSoftmax,
  Softmax,
  KlDivergence,
  CrossEntropy,
  MaxPool2d,
  Reshape,
  GlobalAvgPool,
  BatchNorm,
  BatchNormInference,
};

std::string_view op_name(OpKind kind);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Record of one evaluated operation. `value` is fixed once the node exists.
struct Node {
  OpKind kind = OpKind::Constant;
  std::vector<NodeId> inputs;
  Tensor value;
  bool requires_grad = false;

  // Op attributes; which ones are meaningful depends on `kind`.
  Real scalar = 0;                   // scale factor, temperature, epsilon
  Conv2dOptions conv;                // Conv2d
  std::vector<std::size_t> indices;  // CrossEntropy labels, MaxPool2d argmax
  std::vector<Real> aux;             // BatchNorm: normalized input x_hat
  std::vector<Real> aux_channel;     // BatchNorm: per-channel inverse std
  std::vector<Real> aux_channel2;    // BatchNorm: per-channel batch mean / inference shift
};

/// Gradient of the loss with respect to each trainable parameter node.
using GradientMap = std::map<NodeId, Tensor>;

/// Eagerly evaluated computation tape. Each builder method validates shapes,
/// computes the output value immediately and appends one node; `backward`
/// replays the tape in reverse.
class Graph {
 public:
  NodeId constant(Tensor value);
  NodeId parameter(Tensor value);

  /// (m,k) x (k,n) -> (m,n)
  NodeId matmul(NodeId a, NodeId b);
  /// Elementwise sum. `b` may also be a vector broadcast along axis 1 of `a`
  /// (bias over features for (N,C) or over channels for (N,C,H,W)).
  NodeId add(NodeId a, NodeId b);
  /// x (N,C,H,W) with square filters w (O,C,K,K) -> (N,O,Ho,Wo).
  NodeId conv2d(NodeId x, NodeId w, Conv2dOptions options);
  NodeId relu(NodeId x);
  NodeId sigmoid(NodeId x);
  /// Squared error summed over every non-batch axis and averaged over axis 0.
  NodeId mse(NodeId prediction, NodeId target);
  NodeId scale(NodeId x, Real factor);
  NodeId mean(NodeId x);
  NodeId sum(NodeId x);
  /// Row-wise log(softmax(x / temperature)) of a (N,C) tensor.
  NodeId log_softmax(NodeId x, Real temperature = 1);
  /// Row-wise softmax(x / temperature) of a (N,C) tensor.
  NodeId softmax(NodeId x, Real temperature = 1);
  /// KL(p || q) from row-wise log-probabilities, summed over classes and
  /// averaged over rows.
  NodeId kl_divergence(NodeId log_p, NodeId log_q);
  /// Mean negative log-softmax probability of each row's label.
  NodeId cross_entropy(NodeId logits, std::span<const std::size_t> labels);
  /// 2x2 max pooling with stride 2 on (N,C,H,W).
  NodeId max_pool2d(NodeId x);
  NodeId reshape(NodeId x, Shape shape);
  /// (N,C,H,W) -> (N,C)
  NodeId global_avg_pool(NodeId x);
  /// Training-mode batch normalization over every axis except 1.
  NodeId batch_norm(NodeId x, NodeId gamma, NodeId beta, Real epsilon);
  /// Batch normalization with fixed statistics.
  NodeId batch_norm_inference(NodeId x, NodeId gamma, NodeId beta, std::span<const Real> mean,
                              std::span<const Real> variance, Real epsilon);

  const Tensor& value(NodeId id) const { return nodes_.at(id.index).value; }
  const Node& node(NodeId id) const { return nodes_.at(id.index); }
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<NodeId>& parameters() const noexcept { return parameters_; }

  /// Per-channel batch mean and biased variance computed by a BatchNorm node.
  void batch_statistics(NodeId bn, std::vector<Real>& mean, std::vector<Real>& variance) const;

  /// Reverse pass from a scalar loss. Every parameter appears in the result;
  /// parameters the loss does not depend on get exact zeros.
  GradientMap backward(NodeId loss) const;

 private:
  NodeId push(Node node);
  const Node& at(NodeId id) const { return nodes_.at(id.index); }
  void propagate(std::size_t index, const std::vector<Real>& grad_out, std::vector<std::vector<Real>>& grads) const;

  std::vector<Node> nodes_;
  std::vector<NodeId> parameters_;
};

}  // namespace autograd
ANNEALKD_END_NAMESPACE
