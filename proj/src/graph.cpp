#include "annealkd/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "annealkd/errors.hpp"
#include "kernels.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace autograd {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Parameter: return "parameter";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Mse: return "mse";
    case OpKind::Scale: return "scale";
    case OpKind::Mean: return "mean";
    case OpKind::Sum: return "sum";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Softmax: return "softmax";
    case OpKind::KlDivergence: return "kl_divergence";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::MaxPool2d: return "max_pool2d";
    case OpKind::Reshape: return "reshape";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::BatchNorm: return "batch_norm";
    case OpKind::BatchNormInference: return "batch_norm_inference";
  }
  return "unknown";
}

namespace {

[[noreturn]] void shape_mismatch(OpKind kind, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

[[noreturn]] void bad_shape(OpKind kind, const Shape& a, const char* rule) {
  throw ShapeError(std::string(op_name(kind)) + ": input shape " + to_string(a) + " " + rule);
}

void check_temperature(OpKind kind, Real temperature) {
  if (!(temperature > 0)) {
    throw InvalidArgument(std::string(op_name(kind)) + ": temperature must be positive, got " +
                          std::to_string(temperature));
  }
}

// Splits a tensor of rank >= 2 around axis 1: outer x channels x inner.
struct ChannelLayout {
  std::size_t outer, channels, inner;
};

ChannelLayout channel_layout(const Shape& s) {
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  return {s[0], s[1], inner};
}

// Row-wise log-softmax of x / temperature with max subtraction.
void log_softmax_rows(std::span<const Real> x, std::size_t rows, std::size_t cols, Real temperature,
                      std::span<Real> out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = x.data() + r * cols;
    Real* yr = out.data() + r * cols;
    Real mx = xr[0] / temperature;
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c] / temperature);
    Real total = 0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(xr[c] / temperature - mx);
    const Real log_total = std::log(total) + mx;
    for (std::size_t c = 0; c < cols; ++c) yr[c] = xr[c] / temperature - log_total;
  }
}

kernels::ConvGeometry conv_geometry(const Shape& x, const Shape& w, Conv2dOptions o) {
  const std::size_t k = w[2];
  kernels::ConvGeometry g{x[1], x[2], x[3], k, o.stride, o.padding, 0, 0};
  g.out_height = (x[2] + 2 * o.padding - k) / o.stride + 1;
  g.out_width = (x[3] + 2 * o.padding - k) / o.stride + 1;
  return g;
}

}  // namespace

NodeId Graph::push(Node node) {
  const std::size_t index = nodes_.size();
  if (!node.value.all_finite()) {
    throw NumericError(std::string(op_name(node.kind)) + ": non-finite value produced at node " +
                           std::to_string(index),
                       index);
  }
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::uint32_t>(index)};
}

NodeId Graph::constant(Tensor value) {
  Node n;
  n.kind = OpKind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::parameter(Tensor value) {
  Node n;
  n.kind = OpKind::Parameter;
  n.value = std::move(value);
  n.requires_grad = true;
  const NodeId id = push(std::move(n));
  parameters_.push_back(id);
  return id;
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& av = at(a).value;
  const Tensor& bv = at(b).value;
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) shape_mismatch(OpKind::MatMul, av.shape(), bv.shape());
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Node node;
  node.kind = OpKind::MatMul;
  node.inputs = {a, b};
  node.value = Tensor(Shape{m, n});
  kernels::gemm_nn(m, n, k, av.data().data(), bv.data().data(), node.value.data().data());
  node.requires_grad = at(a).requires_grad || at(b).requires_grad;
  return push(std::move(node));
}

NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& av = at(a).value;
  const Tensor& bv = at(b).value;
  Node node;
  node.kind = OpKind::Add;
  node.inputs = {a, b};
  node.requires_grad = at(a).requires_grad || at(b).requires_grad;
  if (av.shape() == bv.shape()) {
    node.value = av;
    auto out = node.value.data();
    auto bd = bv.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  } else if (av.rank() >= 2 && bv.rank() == 1 && bv.dim(0) == av.dim(1)) {
    node.value = av;
    const auto [outer, channels, inner] = channel_layout(av.shape());
    auto out = node.value.data();
    auto bd = bv.data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t c = 0; c < channels; ++c) {
        Real* p = out.data() + (o * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) p[i] += bd[c];
      }
    }
  } else {
    shape_mismatch(OpKind::Add, av.shape(), bv.shape());
  }
  return push(std::move(node));
}

NodeId Graph::conv2d(NodeId x, NodeId w, Conv2dOptions options) {
  const Tensor& xv = at(x).value;
  const Tensor& wv = at(w).value;
  if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(1) != xv.dim(1) || wv.dim(2) != wv.dim(3)) {
    shape_mismatch(OpKind::Conv2d, xv.shape(), wv.shape());
  }
  if (options.stride < 1 || options.stride > 2) {
    throw InvalidArgument("conv2d: stride must be 1 or 2, got " + std::to_string(options.stride));
  }
  const std::size_t k = wv.dim(2);
  if (xv.dim(2) + 2 * options.padding < k || xv.dim(3) + 2 * options.padding < k) {
    shape_mismatch(OpKind::Conv2d, xv.shape(), wv.shape());
  }
  const auto g = conv_geometry(xv.shape(), wv.shape(), options);
  const std::size_t batch = xv.dim(0), out_channels = wv.dim(0);
  Node node;
  node.kind = OpKind::Conv2d;
  node.inputs = {x, w};
  node.conv = options;
  node.value = Tensor(Shape{batch, out_channels, g.out_height, g.out_width});
  node.requires_grad = at(x).requires_grad || at(w).requires_grad;

  std::vector<Real> col(g.col_rows() * g.col_cols());
  const std::size_t in_stride = g.channels * g.height * g.width;
  const std::size_t out_stride = out_channels * g.col_cols();
  for (std::size_t n = 0; n < batch; ++n) {
    kernels::im2col(g, xv.data().data() + n * in_stride, col.data());
    kernels::gemm_nn(out_channels, g.col_cols(), g.col_rows(), wv.data().data(), col.data(),
                     node.value.data().data() + n * out_stride);
  }
  return push(std::move(node));
}

NodeId Graph::relu(NodeId x) {
  Node node;
  node.kind = OpKind::Relu;
  node.inputs = {x};
  node.value = at(x).value;
  for (Real& v : node.value.data()) v = v > 0 ? v : Real(0);
  node.requires_grad = at(x).requires_grad;
  return push(std::move(node));
}

NodeId Graph::sigmoid(NodeId x) {
  Node node;
  node.kind = OpKind::Sigmoid;
  node.inputs = {x};
  node.value = at(x).value;
  for (Real& v : node.value.data()) {
    // Branch on sign so exp never overflows.
    if (v >= 0) {
      v = Real(1) / (Real(1) + std::exp(-v));
    } else {
      const Real e = std::exp(v);
      v = e / (Real(1) + e);
    }
  }
  node.requires_grad = at(x).requires_grad;
  return push(std::move(node));
}

NodeId Graph::mse(NodeId prediction, NodeId target) {
  const Tensor& p = at(prediction).value;
  const Tensor& t = at(target).value;
  if (p.shape() != t.shape()) shape_mismatch(OpKind::Mse, p.shape(), t.shape());
  Real total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Real d = p[i] - t[i];
    total += d * d;
  }
  Node node;
  node.kind = OpKind::Mse;
  node.inputs = {prediction, target};
  node.value = Tensor::scalar(total / static_cast<Real>(p.dim(0)));
  node.requires_grad = at(prediction).requires_grad || at(target).requires_grad;
  return push(std::move(node));
}

NodeId Graph::scale(NodeId x, Real factor) {
  Node node;
  node.kind = OpKind::Scale;
  node.inputs = {x};
  node.scalar = factor;
  node.value = at(x).value;
  for (Real& v : node.value.data()) v *= factor;
  node.requires_grad = at(x).requires_grad;
  return push(std::move(node));
}

NodeId Graph::mean(NodeId x) {
  const Tensor& xv = at(x).value;
  Real total = 0;
  for (Real v : xv.data()) total += v;
  Node node;
  node.kind = OpKind::Mean;
  node.inputs = {x};
  node.value = Tensor::scalar(total / static_cast<Real>(xv.size()));
  node.requires_grad = at(x).requires_grad;
  return push(std::move(node));
}

NodeId Graph::sum(NodeId x) {
  Real total = 0;
  for (Real v : at(x).value.data()) total += v;
  Node node;
  node.kind = OpKind::Sum;
  node.inputs = {x};
  node.value = Tensor::scalar(total);
  node.requires_grad = at(x).requires_grad;
  return push(std::move(node));
}

NodeId Graph::log_softmax(NodeId x, Real temperature) {
  check_temperature(OpKind::LogSoftmax, temperature);
  const Tensor& xv = at(x).value;
  if (xv.rank() != 2) bad_shape(OpKind::LogSoftmax, xv.shape(), "must be (batch, classes)");
  Node node;
  node.kind = OpKind::LogSoftmax;
  node.inputs = {x};
  node.scalar = temperature;
  node.value = Tensor(xv.shape());
  log_softmax_rows(xv.data(), xv.dim(0), xv.dim(1), temperature, node.value.data());
  node.requires_grad = at(x).requires_grad;
  return push(std::move(node));
}

NodeId Graph::softmax(NodeId x, Real temperature) {
  check_temperature(OpKind::Softmax, temperature);
  const Tensor& xv = at(x).value;
  if (xv.rank() != 2) bad_shape(OpKind::Softmax, xv.shape(), "must be (batch, classes)");
  Node node;
  node.kind = OpKind::Softmax;
  node.inputs = {x};
  node.scalar = temperature;
  node.value = Tensor(xv.shape());
  log_softmax_rows(xv.data(), xv.dim(0), xv.dim(1), temperature, node.value.data());
  for (Real& v : node.value.data()) v = std::exp(v);
  node.requires_grad = at(x).requires_grad;
  return push(std::move(node));
}

NodeId Graph::kl_divergence(NodeId log_p, NodeId log_q) {
  const Tensor& lp = at(log_p).value;
  const Tensor& lq = at(log_q).value;
  if (lp.shape() != lq.shape() || lp.rank() != 2) shape_mismatch(OpKind::KlDivergence, lp.shape(), lq.shape());
  Real total = 0;
  for (std::size_t i = 0; i < lp.size(); ++i) total += std::exp(lp[i]) * (lp[i] - lq[i]);
  Node node;
  node.kind = OpKind::KlDivergence;
  node.inputs = {log_p, log_q};
  node.value = Tensor::scalar(total / static_cast<Real>(lp.dim(0)));
  node.requires_grad = at(log_p).requires_grad || at(log_q).requires_grad;
  return push(std::move(node));
}

NodeId Graph::cross_entropy(NodeId logits, std::span<const std::size_t> labels) {
  const Tensor& z = at(logits).value;
  if (z.rank() != 2) bad_shape(OpKind::CrossEntropy, z.shape(), "must be (batch, classes)");
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  if (labels.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits of shape " +
                     to_string(z.shape()));
  }
  for (std::size_t label : labels) {
    if (label >= cols) {
      throw InvalidArgument("cross_entropy: label " + std::to_string(label) + " out of range [0," +
                            std::to_string(cols) + ")");
    }
  }
  std::vector<Real> logp(z.size());
  log_softmax_rows(z.data(), rows, cols, Real(1), logp);
  Real total = 0;
  for (std::size_t r = 0; r < rows; ++r) total -= logp[r * cols + labels[r]];
  Node node;
  node.kind = OpKind::CrossEntropy;
  node.inputs = {logits};
  node.indices.assign(labels.begin(), labels.end());
  node.value = Tensor::scalar(total / static_cast<Real>(rows));
  node.requires_grad = at(logits).requires_grad;
  return push(std::move(node));
}

NodeId Graph::max_pool2d(NodeId x) {
  const Tensor& xv = at(x).value;
  if (xv.rank() != 4 || xv.dim(2) < 2 || xv.dim(3) < 2) bad_shape(OpKind::MaxPool2d, xv.shape(), "must be (N,C,H>=2,W>=2)");
  const std::size_t planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  Node node;
  node.kind = OpKind::MaxPool2d;
  node.inputs = {x};
  node.value = Tensor(Shape{xv.dim(0), xv.dim(1), oh, ow});
  node.indices.resize(planes * oh * ow);
  auto out = node.value.data();
  auto in = xv.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = p * h * w + (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = p * h * w + (2 * oy + dy) * w + 2 * ox + dx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = in[best];
        node.indices[o] = best;
      }
    }
  }
  node.requires_grad = at(x).requires_grad;
  return push(std::move(node));
}

NodeId Graph::reshape(NodeId x, Shape shape) {
  Node node;
  node.kind = OpKind::Reshape;
  node.inputs = {x};
  node.value = at(x).value.reshaped(std::move(shape));
  node.requires_grad = at(x).requires_grad;
  return push(std::move(node));
}

NodeId Graph::global_avg_pool(NodeId x) {
  const Tensor& xv = at(x).value;
  if (xv.rank() != 4) bad_shape(OpKind::GlobalAvgPool, xv.shape(), "must be (N,C,H,W)");
  const auto [outer, channels, inner] = channel_layout(xv.shape());
  Node node;
  node.kind = OpKind::GlobalAvgPool;
  node.inputs = {x};
  node.value = Tensor(Shape{outer, channels});
  for (std::size_t p = 0; p < outer * channels; ++p) {
    Real total = 0;
    for (std::size_t i = 0; i < inner; ++i) total += xv[p * inner + i];
    node.value[p] = total / static_cast<Real>(inner);
  }
  node.requires_grad = at(x).requires_grad;
  return push(std::move(node));
}

NodeId Graph::batch_norm(NodeId x, NodeId gamma, NodeId beta, Real epsilon) {
  const Tensor& xv = at(x).value;
  const Tensor& gv = at(gamma).value;
  const Tensor& bv = at(beta).value;
  if (xv.rank() < 2) bad_shape(OpKind::BatchNorm, xv.shape(), "must have rank >= 2");
  const auto [outer, channels, inner] = channel_layout(xv.shape());
  if (gv.shape() != Shape{channels}) shape_mismatch(OpKind::BatchNorm, xv.shape(), gv.shape());
  if (bv.shape() != Shape{channels}) shape_mismatch(OpKind::BatchNorm, xv.shape(), bv.shape());
  const Real count = static_cast<Real>(outer * inner);

  Node node;
  node.kind = OpKind::BatchNorm;
  node.inputs = {x, gamma, beta};
  node.scalar = epsilon;
  node.value = Tensor(xv.shape());
  node.aux.resize(xv.size());
  node.aux_channel.resize(channels);
  node.aux_channel2.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    Real total = 0;
    for (std::size_t o = 0; o < outer; ++o) {
      const Real* p = xv.data().data() + (o * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) total += p[i];
    }
    const Real mu = total / count;
    Real sq = 0;
    for (std::size_t o = 0; o < outer; ++o) {
      const Real* p = xv.data().data() + (o * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) sq += (p[i] - mu) * (p[i] - mu);
    }
    const Real var = sq / count;
    const Real inv_std = Real(1) / std::sqrt(var + epsilon);
    node.aux_channel[c] = inv_std;
    node.aux_channel2[c] = mu;
    for (std::size_t o = 0; o < outer; ++o) {
      const std::size_t base = (o * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const Real xhat = (xv[base + i] - mu) * inv_std;
        node.aux[base + i] = xhat;
        node.value[base + i] = gv[c] * xhat + bv[c];
      }
    }
  }
  node.requires_grad = at(x).requires_grad || at(gamma).requires_grad || at(beta).requires_grad;
  return push(std::move(node));
}

NodeId Graph::batch_norm_inference(NodeId x, NodeId gamma, NodeId beta, std::span<const Real> mean,
                                   std::span<const Real> variance, Real epsilon) {
  const Tensor& xv = at(x).value;
  const Tensor& gv = at(gamma).value;
  const Tensor& bv = at(beta).value;
  if (xv.rank() < 2) bad_shape(OpKind::BatchNormInference, xv.shape(), "must have rank >= 2");
  const auto [outer, channels, inner] = channel_layout(xv.shape());
  if (gv.shape() != Shape{channels} || bv.shape() != Shape{channels} || mean.size() != channels ||
      variance.size() != channels) {
    shape_mismatch(OpKind::BatchNormInference, xv.shape(), gv.shape());
  }
  Node node;
  node.kind = OpKind::BatchNormInference;
  node.inputs = {x, gamma, beta};
  node.scalar = epsilon;
  node.value = Tensor(xv.shape());
  node.aux_channel.resize(channels);
  node.aux_channel2.assign(mean.begin(), mean.end());
  for (std::size_t c = 0; c < channels; ++c) node.aux_channel[c] = Real(1) / std::sqrt(variance[c] + epsilon);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (o * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        node.value[base + i] = gv[c] * (xv[base + i] - mean[c]) * node.aux_channel[c] + bv[c];
      }
    }
  }
  node.requires_grad = at(x).requires_grad || at(gamma).requires_grad || at(beta).requires_grad;
  return push(std::move(node));
}

void Graph::batch_statistics(NodeId bn, std::vector<Real>& mean, std::vector<Real>& variance) const {
  const Node& n = at(bn);
  if (n.kind != OpKind::BatchNorm) throw InvalidArgument("batch_statistics: node is not a batch_norm node");
  mean = n.aux_channel2;
  variance.resize(n.aux_channel.size());
  for (std::size_t c = 0; c < variance.size(); ++c) {
    variance[c] = Real(1) / (n.aux_channel[c] * n.aux_channel[c]) - n.scalar;
  }
}

GradientMap Graph::backward(NodeId loss) const {
  const Node& root = at(loss);
  if (root.value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + to_string(root.value.shape()));
  }
  std::vector<std::vector<Real>> grads(nodes_.size());
  grads[loss.index].assign(1, Real(1));
  for (std::size_t j = loss.index + 1; j-- > 0;) {
    if (grads[j].empty() || !nodes_[j].requires_grad) continue;
    for (Real g : grads[j]) {
      if (!std::isfinite(g)) {
        throw NumericError("backward: non-finite gradient at node " + std::to_string(j) + " (" +
                               std::string(op_name(nodes_[j].kind)) + ")",
                           j);
      }
    }
    propagate(j, grads[j], grads);
  }
  GradientMap out;
  for (NodeId p : parameters_) {
    const Tensor& v = at(p).value;
    if (grads[p.index].empty()) {
      out.emplace(p, Tensor(v.shape()));
    } else {
      out.emplace(p, Tensor(v.shape(), std::move(grads[p.index])));
    }
  }
  return out;
}

void Graph::propagate(std::size_t index, const std::vector<Real>& dy, std::vector<std::vector<Real>>& grads) const {
  const Node& n = nodes_[index];
  // Returns the gradient buffer of input `slot`, or nullptr when that input
  // does not need one.
  auto input_grad = [&](std::size_t slot) -> Real* {
    const NodeId id = n.inputs[slot];
    const Node& in = nodes_[id.index];
    if (!in.requires_grad) return nullptr;
    auto& g = grads[id.index];
    if (g.empty()) g.assign(in.value.size(), Real(0));
    return g.data();
  };
  auto input_value = [&](std::size_t slot) -> const Tensor& { return nodes_[n.inputs[slot].index].value; };

  switch (n.kind) {
    case OpKind::Constant:
    case OpKind::Parameter:
      return;

    case OpKind::MatMul: {
      const Tensor& a = input_value(0);
      const Tensor& b = input_value(1);
      const std::size_t m = a.dim(0), k = a.dim(1), cols = b.dim(1);
      if (Real* ga = input_grad(0)) kernels::gemm_nt(m, k, cols, dy.data(), b.data().data(), ga);
      if (Real* gb = input_grad(1)) kernels::gemm_tn(k, cols, m, a.data().data(), dy.data(), gb);
      return;
    }

    case OpKind::Add: {
      const Tensor& a = input_value(0);
      const Tensor& b = input_value(1);
      if (Real* ga = input_grad(0)) {
        for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i];
      }
      if (Real* gb = input_grad(1)) {
        if (a.shape() == b.shape()) {
          for (std::size_t i = 0; i < dy.size(); ++i) gb[i] += dy[i];
        } else {
          const auto [outer, channels, inner] = channel_layout(a.shape());
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t c = 0; c < channels; ++c) {
              const Real* p = dy.data() + (o * channels + c) * inner;
              Real total = 0;
              for (std::size_t i = 0; i < inner; ++i) total += p[i];
              gb[c] += total;
            }
          }
        }
      }
      return;
    }

    case OpKind::Conv2d: {
      const Tensor& x = input_value(0);
      const Tensor& w = input_value(1);
      const auto g = conv_geometry(x.shape(), w.shape(), n.conv);
      const std::size_t batch = x.dim(0), out_channels = w.dim(0);
      const std::size_t in_stride = g.channels * g.height * g.width;
      const std::size_t out_stride = out_channels * g.col_cols();
      Real* gx = input_grad(0);
      Real* gw = input_grad(1);
      std::vector<Real> col(g.col_rows() * g.col_cols());
      std::vector<Real> dcol;
      if (gx) dcol.resize(col.size());
      for (std::size_t b = 0; b < batch; ++b) {
        const Real* dyb = dy.data() + b * out_stride;
        if (gw) {
          kernels::im2col(g, x.data().data() + b * in_stride, col.data());
          kernels::gemm_nt(out_channels, g.col_rows(), g.col_cols(), dyb, col.data(), gw);
        }
        if (gx) {
          std::fill(dcol.begin(), dcol.end(), Real(0));
          kernels::gemm_tn(g.col_rows(), g.col_cols(), out_channels, w.data().data(), dyb, dcol.data());
          kernels::col2im(g, dcol.data(), gx + b * in_stride);
        }
      }
      return;
    }

    case OpKind::Relu: {
      if (Real* gx = input_grad(0)) {
        const Tensor& x = input_value(0);
        for (std::size_t i = 0; i < dy.size(); ++i) {
          if (x[i] > 0) gx[i] += dy[i];
        }
      }
      return;
    }

    case OpKind::Sigmoid: {
      if (Real* gx = input_grad(0)) {
        for (std::size_t i = 0; i < dy.size(); ++i) {
          const Real s = n.value[i];
          gx[i] += dy[i] * s * (Real(1) - s);
        }
      }
      return;
    }

    case OpKind::Mse: {
      const Tensor& p = input_value(0);
      const Tensor& t = input_value(1);
      const Real factor = Real(2) * dy[0] / static_cast<Real>(p.dim(0));
      if (Real* gp = input_grad(0)) {
        for (std::size_t i = 0; i < p.size(); ++i) gp[i] += factor * (p[i] - t[i]);
      }
      if (Real* gt = input_grad(1)) {
        for (std::size_t i = 0; i < p.size(); ++i) gt[i] -= factor * (p[i] - t[i]);
      }
      return;
    }

    case OpKind::Scale: {
      if (Real* gx = input_grad(0)) {
        for (std::size_t i = 0; i < dy.size(); ++i) gx[i] += n.scalar * dy[i];
      }
      return;
    }

    case OpKind::Mean: {
      if (Real* gx = input_grad(0)) {
        const std::size_t count = input_value(0).size();
        const Real g = dy[0] / static_cast<Real>(count);
        for (std::size_t i = 0; i < count; ++i) gx[i] += g;
      }
      return;
    }

    case OpKind::Sum: {
      if (Real* gx = input_grad(0)) {
        const std::size_t count = input_value(0).size();
        for (std::size_t i = 0; i < count; ++i) gx[i] += dy[0];
      }
      return;
    }

    case OpKind::LogSoftmax: {
      if (Real* gx = input_grad(0)) {
        const std::size_t rows = n.value.dim(0), cols = n.value.dim(1);
        for (std::size_t r = 0; r < rows; ++r) {
          Real total = 0;
          for (std::size_t c = 0; c < cols; ++c) total += dy[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            gx[i] += (dy[i] - std::exp(n.value[i]) * total) / n.scalar;
          }
        }
      }
      return;
    }

    case OpKind::Softmax: {
      if (Real* gx = input_grad(0)) {
        const std::size_t rows = n.value.dim(0), cols = n.value.dim(1);
        for (std::size_t r = 0; r < rows; ++r) {
          Real dot = 0;
          for (std::size_t c = 0; c < cols; ++c) dot += dy[r * cols + c] * n.value[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            gx[i] += n.value[i] * (dy[i] - dot) / n.scalar;
          }
        }
      }
      return;
    }

    case OpKind::KlDivergence: {
      const Tensor& lp = input_value(0);
      const Tensor& lq = input_value(1);
      const Real factor = dy[0] / static_cast<Real>(lp.dim(0));
      if (Real* gp = input_grad(0)) {
        for (std::size_t i = 0; i < lp.size(); ++i) gp[i] += factor * std::exp(lp[i]) * (lp[i] - lq[i] + Real(1));
      }
      if (Real* gq = input_grad(1)) {
        for (std::size_t i = 0; i < lp.size(); ++i) gq[i] -= factor * std::exp(lp[i]);
      }
      return;
    }

    case OpKind::CrossEntropy: {
      if (Real* gz = input_grad(0)) {
        const Tensor& z = input_value(0);
        const std::size_t rows = z.dim(0), cols = z.dim(1);
        std::vector<Real> logp(z.size());
        log_softmax_rows(z.data(), rows, cols, Real(1), logp);
        const Real factor = dy[0] / static_cast<Real>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            const Real target = c == n.indices[r] ? Real(1) : Real(0);
            gz[i] += factor * (std::exp(logp[i]) - target);
          }
        }
      }
      return;
    }

    case OpKind::MaxPool2d: {
      if (Real* gx = input_grad(0)) {
        for (std::size_t o = 0; o < dy.size(); ++o) gx[n.indices[o]] += dy[o];
      }
      return;
    }

    case OpKind::Reshape: {
      if (Real* gx = input_grad(0)) {
        for (std::size_t i = 0; i < dy.size(); ++i) gx[i] += dy[i];
      }
      return;
    }

    case OpKind::GlobalAvgPool: {
      if (Real* gx = input_grad(0)) {
        const std::size_t inner = input_value(0).size() / dy.size();
        for (std::size_t p = 0; p < dy.size(); ++p) {
          const Real g = dy[p] / static_cast<Real>(inner);
          for (std::size_t i = 0; i < inner; ++i) gx[p * inner + i] += g;
        }
      }
      return;
    }

    case OpKind::BatchNorm: {
      const Tensor& x = input_value(0);
      const Tensor& gamma = input_value(1);
      const auto [outer, channels, inner] = channel_layout(x.shape());
      const Real count = static_cast<Real>(outer * inner);
      Real* gx = input_grad(0);
      Real* gg = input_grad(1);
      Real* gb = input_grad(2);
      for (std::size_t c = 0; c < channels; ++c) {
        Real sum_dy = 0, sum_dy_xhat = 0;
        for (std::size_t o = 0; o < outer; ++o) {
          const std::size_t base = (o * channels + c) * inner;
          for (std::size_t i = 0; i < inner; ++i) {
            sum_dy += dy[base + i];
            sum_dy_xhat += dy[base + i] * n.aux[base + i];
          }
        }
        if (gg) gg[c] += sum_dy_xhat;
        if (gb) gb[c] += sum_dy;
        if (gx) {
          const Real scale = gamma[c] * n.aux_channel[c] / count;
          for (std::size_t o = 0; o < outer; ++o) {
            const std::size_t base = (o * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              gx[base + i] += scale * (count * dy[base + i] - sum_dy - n.aux[base + i] * sum_dy_xhat);
            }
          }
        }
      }
      return;
    }

    case OpKind::BatchNormInference: {
      const Tensor& x = input_value(0);
      const Tensor& gamma = input_value(1);
      const auto [outer, channels, inner] = channel_layout(x.shape());
      Real* gx = input_grad(0);
      Real* gg = input_grad(1);
      Real* gb = input_grad(2);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t base = (o * channels + c) * inner;
          const Real inv = n.aux_channel[c];
          const Real mu = n.aux_channel2[c];
          for (std::size_t i = 0; i < inner; ++i) {
            const Real d = dy[base + i];
            if (gx) gx[base + i] += d * gamma[c] * inv;
            if (gg) gg[c] += d * (x[base + i] - mu) * inv;
            if (gb) gb[c] += d;
          }
        }
      }
      return;
    }
  }
}

}  // namespace autograd
ANNEALKD_END_NAMESPACE
