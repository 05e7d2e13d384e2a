#include "annealkd/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <string>
#include <utility>

#include "annealkd/errors.hpp"
#include "format.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace models {

using autograd::Graph;
using autograd::NodeId;

namespace {

constexpr Real kBatchNormEpsilon = Real(1e-5);

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<std::size_t> split_sizes(std::string_view text) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find(',', pos), text.size());
    const std::string_view item = text.substr(pos, end - pos);
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
    if (ec != std::errc() || ptr != item.data() + item.size() || item.empty()) {
      throw InvalidArgument("model spec: bad size list '" + std::string(text) + "'");
    }
    out.push_back(value);
    pos = end + 1;
  }
  return out;
}

// Number of conv layers per stage for the plain CNN family.
std::vector<std::size_t> plain_cnn_stages(int depth) {
  switch (depth) {
    case 2: return {1};
    case 4: return {1, 1, 1};
    case 10: return {3, 3, 3};
    default: throw InvalidArgument("plain-cnn depth must be one of {2,4,10}, got " + std::to_string(depth));
  }
}

std::size_t resnet_blocks(int depth) {
  if (depth != 8 && depth != 20 && depth != 110) {
    throw InvalidArgument("resnet-small depth must be one of {8,20,110}, got " + std::to_string(depth));
  }
  return static_cast<std::size_t>((depth - 2) / 6);
}

class Initializer {
 public:
  Initializer(std::uint64_t seed, Activation act) : rng_(seed), activation_(act) {}

  // He-uniform for relu, Xavier-uniform for sigmoid.
  Tensor weight(Shape shape, std::size_t fan_in, std::size_t fan_out) {
    const double bound = activation_ == Activation::Relu
                             ? std::sqrt(6.0 / static_cast<double>(fan_in))
                             : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return uniform(std::move(shape), bound);
  }

  Tensor uniform(Shape shape, double bound) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Real& v : t.data()) v = static_cast<Real>(dist(rng_));
    return t;
  }

 private:
  std::mt19937_64 rng_;
  Activation activation_;
};

}  // namespace

std::string_view to_string(Family family) {
  switch (family) {
    case Family::Mlp: return "mlp";
    case Family::PlainCnn: return "plain-cnn";
    case Family::ResnetSmall: return "resnet-small";
  }
  return "unknown";
}

std::string_view to_string(Activation activation) {
  return activation == Activation::Sigmoid ? "sigmoid" : "relu";
}

Family parse_family(std::string_view text) {
  if (text == "mlp") return Family::Mlp;
  if (text == "plain-cnn") return Family::PlainCnn;
  if (text == "resnet-small") return Family::ResnetSmall;
  throw InvalidArgument("unsupported model family '" + std::string(text) + "' (allowed: mlp, plain-cnn, resnet-small)");
}

Activation parse_activation(std::string_view text) {
  if (text == "sigmoid") return Activation::Sigmoid;
  if (text == "relu") return Activation::Relu;
  throw InvalidArgument("unsupported activation '" + std::string(text) + "' (allowed: sigmoid, relu)");
}

ModelSpec ModelSpec::mlp(std::vector<std::size_t> layers, Activation activation, std::uint64_t seed) {
  ModelSpec s;
  s.family = Family::Mlp;
  s.activation = activation;
  s.seed = seed;
  if (!layers.empty()) {
    s.input_shape = {layers.front()};
    s.output_dim = layers.back();
  }
  s.layers = std::move(layers);
  return s;
}

ModelSpec ModelSpec::plain_cnn(int depth, std::size_t classes, std::uint64_t seed, Shape input) {
  ModelSpec s;
  s.family = Family::PlainCnn;
  s.depth = depth;
  s.activation = Activation::Relu;
  s.input_shape = std::move(input);
  s.output_dim = classes;
  s.seed = seed;
  return s;
}

ModelSpec ModelSpec::resnet_small(int depth, std::size_t classes, std::uint64_t seed, Shape input) {
  ModelSpec s = plain_cnn(depth, classes, seed, std::move(input));
  s.family = Family::ResnetSmall;
  return s;
}

std::string ModelSpec::describe() const {
  const std::string scale = detail::format_double(first_layer_scale);
  return "family=" + std::string(to_string(family)) + ";layers=" + join_sizes(layers) +
         ";depth=" + std::to_string(depth) + ";activation=" + std::string(to_string(activation)) +
         ";input=" + join_sizes(input_shape) + ";output=" + std::to_string(output_dim) +
         ";seed=" + std::to_string(seed) + ";first_layer_scale=" + scale;
}

ModelSpec ModelSpec::parse(std::string_view description) {
  ModelSpec s;
  std::size_t pos = 0;
  while (pos < description.size()) {
    const std::size_t end = std::min(description.find(';', pos), description.size());
    const std::string_view item = description.substr(pos, end - pos);
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos) throw InvalidArgument("model spec: malformed item '" + std::string(item) + "'");
    const std::string_view key = item.substr(0, eq);
    const std::string value(item.substr(eq + 1));
    if (key == "family") {
      s.family = parse_family(value);
    } else if (key == "layers") {
      s.layers = value.empty() ? std::vector<std::size_t>{} : split_sizes(value);
    } else if (key == "depth") {
      s.depth = std::stoi(value);
    } else if (key == "activation") {
      s.activation = parse_activation(value);
    } else if (key == "input") {
      s.input_shape = value.empty() ? Shape{} : split_sizes(value);
    } else if (key == "output") {
      s.output_dim = std::stoull(value);
    } else if (key == "seed") {
      s.seed = std::stoull(value);
    } else if (key == "first_layer_scale") {
      s.first_layer_scale = std::stod(value);
    } else {
      throw InvalidArgument("model spec: unknown key '" + std::string(key) + "'");
    }
    pos = end + 1;
  }
  return s;
}

void validate(const ModelSpec& spec) {
  switch (spec.family) {
    case Family::Mlp:
      if (spec.layers.size() < 2) throw InvalidArgument("mlp layer list needs at least input and output widths");
      for (std::size_t w : spec.layers) {
        if (w == 0) throw InvalidArgument("mlp layer widths must be positive");
      }
      if (spec.input_shape != Shape{spec.layers.front()} || spec.output_dim != spec.layers.back()) {
        throw InvalidArgument("mlp input/output must match the first/last layer widths");
      }
      break;
    case Family::PlainCnn: {
      const auto stages = plain_cnn_stages(spec.depth);
      if (spec.input_shape.size() != 3) throw InvalidArgument("plain-cnn input shape must be {channels,height,width}");
      const std::size_t reduce = std::size_t{1} << stages.size();
      if (spec.input_shape[1] % reduce != 0 || spec.input_shape[2] % reduce != 0) {
        throw InvalidArgument("plain-cnn input height/width must be divisible by " + std::to_string(reduce));
      }
      break;
    }
    case Family::ResnetSmall:
      resnet_blocks(spec.depth);
      if (spec.input_shape.size() != 3) throw InvalidArgument("resnet-small input shape must be {channels,height,width}");
      if (spec.input_shape[1] < 4 || spec.input_shape[2] < 4) throw InvalidArgument("resnet-small input must be at least 4x4");
      break;
  }
  if (spec.output_dim == 0) throw InvalidArgument("output dimension must be positive");
  for (std::size_t d : spec.input_shape) {
    if (d == 0) throw InvalidArgument("input shape dimensions must be positive");
  }
  if (spec.first_layer_scale < 0 || !std::isfinite(spec.first_layer_scale)) {
    throw InvalidArgument("first_layer_scale must be a non-negative finite number");
  }
  if (spec.first_layer_scale > 0 && spec.family != Family::Mlp) {
    throw InvalidArgument("first_layer_scale applies to the mlp family only");
  }
}

bool is_desk_scale(const ModelSpec& spec) { return !(spec.family == Family::ResnetSmall && spec.depth == 110); }

void Model::add_param(std::string name, Tensor value) {
  names_.push_back(std::move(name));
  params_.push_back(std::move(value));
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
  validate(spec_);
  Initializer init(spec_.seed, spec_.activation);

  switch (spec_.family) {
    case Family::Mlp: {
      for (std::size_t i = 0; i + 1 < spec_.layers.size(); ++i) {
        const std::size_t in = spec_.layers[i], out = spec_.layers[i + 1];
        const std::string prefix = "fc" + std::to_string(i);
        if (i == 0 && spec_.first_layer_scale > 0) {
          add_param(prefix + ".weight", init.uniform({in, out}, spec_.first_layer_scale));
          add_param(prefix + ".bias", init.uniform({out}, spec_.first_layer_scale));
        } else {
          add_param(prefix + ".weight", init.weight({in, out}, in, out));
          add_param(prefix + ".bias", Tensor(Shape{out}));
        }
      }
      break;
    }
    case Family::PlainCnn: {
      std::size_t channels = spec_.input_shape[0];
      std::size_t h = spec_.input_shape[1], w = spec_.input_shape[2];
      std::size_t layer = 0;
      const auto stages = plain_cnn_stages(spec_.depth);
      for (std::size_t s = 0; s < stages.size(); ++s) {
        const std::size_t width = std::size_t{16} << s;
        for (std::size_t c = 0; c < stages[s]; ++c) {
          const std::string prefix = "conv" + std::to_string(layer++);
          add_param(prefix + ".weight", init.weight({width, channels, 3, 3}, channels * 9, width * 9));
          add_param(prefix + ".bias", Tensor(Shape{width}));
          channels = width;
        }
        h /= 2;
        w /= 2;
      }
      const std::size_t features = channels * h * w;
      add_param("fc.weight", init.weight({features, spec_.output_dim}, features, spec_.output_dim));
      add_param("fc.bias", Tensor(Shape{spec_.output_dim}));
      break;
    }
    case Family::ResnetSmall: {
      auto add_bn = [&](const std::string& prefix, std::size_t ch) {
        add_param(prefix + ".gamma", Tensor(Shape{ch}, Real(1)));
        add_param(prefix + ".beta", Tensor(Shape{ch}));
        buffers_.emplace_back(Shape{ch});
        buffers_.emplace_back(Shape{ch}, Real(1));
      };
      const std::size_t blocks = resnet_blocks(spec_.depth);
      std::size_t channels = spec_.input_shape[0];
      add_param("stem.conv.weight", init.weight({16, channels, 3, 3}, channels * 9, 16 * 9));
      add_bn("stem.bn", 16);
      channels = 16;
      for (std::size_t s = 0; s < 3; ++s) {
        const std::size_t width = std::size_t{16} << s;
        for (std::size_t b = 0; b < blocks; ++b) {
          const std::string prefix = "stage" + std::to_string(s) + ".block" + std::to_string(b);
          add_param(prefix + ".conv_a.weight", init.weight({width, channels, 3, 3}, channels * 9, width * 9));
          add_bn(prefix + ".bn_a", width);
          add_param(prefix + ".conv_b.weight", init.weight({width, width, 3, 3}, width * 9, width * 9));
          add_bn(prefix + ".bn_b", width);
          if (width != channels) {
            add_param(prefix + ".proj.weight", init.weight({width, channels, 1, 1}, channels, width));
            add_bn(prefix + ".bn_proj", width);
          }
          channels = width;
        }
      }
      add_param("fc.weight", init.weight({channels, spec_.output_dim}, channels, spec_.output_dim));
      add_param("fc.bias", Tensor(Shape{spec_.output_dim}));
      break;
    }
  }
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  for (const Tensor& p : params_) total += p.size();
  return total;
}

void Model::check_input(const Tensor& batch) const {
  bool ok = batch.rank() == spec_.input_shape.size() + 1;
  for (std::size_t i = 0; ok && i < spec_.input_shape.size(); ++i) ok = batch.dim(i + 1) == spec_.input_shape[i];
  if (!ok) {
    throw ShapeError("model forward: batch shape " + ::annealkd::to_string(batch.shape()) + " does not match input shape " +
                     ::annealkd::to_string(spec_.input_shape));
  }
}

Tensor Model::forward(const Tensor& batch) const {
  check_input(batch);
  Graph g;
  const NodeId x = g.constant(batch);
  std::vector<NodeId> p;
  p.reserve(params_.size());
  for (const Tensor& t : params_) p.push_back(g.constant(t));
  return g.value(run(g, x, p, Mode::Inference, nullptr));
}

Tensor Model::predict(const Tensor& inputs, std::size_t chunk) const {
  check_input(inputs);
  const std::size_t n = inputs.dim(0);
  if (n <= chunk) return forward(inputs);
  const std::size_t row = inputs.size() / n;
  std::vector<Real> out;
  out.reserve(n * spec_.output_dim);
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t count = std::min(chunk, n - start);
    Shape shape = inputs.shape();
    shape[0] = count;
    std::vector<Real> part(inputs.data().begin() + static_cast<std::ptrdiff_t>(start * row),
                           inputs.data().begin() + static_cast<std::ptrdiff_t>((start + count) * row));
    const Tensor logits = forward(Tensor(std::move(shape), std::move(part)));
    out.insert(out.end(), logits.data().begin(), logits.data().end());
  }
  return Tensor(Shape{n, spec_.output_dim}, std::move(out));
}

TrainTrace Model::forward_train(Graph& graph, NodeId input) const {
  check_input(graph.value(input));
  TrainTrace trace;
  trace.params.reserve(params_.size());
  for (const Tensor& t : params_) trace.params.push_back(graph.parameter(t));
  trace.logits = run(graph, input, trace.params, Mode::Train, &trace.batch_norms);
  return trace;
}

void Model::update_running_stats(const Graph& graph, const TrainTrace& trace, Real momentum) {
  if (trace.batch_norms.size() * 2 != buffers_.size()) {
    throw InvalidArgument("update_running_stats: trace does not belong to this model");
  }
  std::vector<Real> mean, var;
  for (std::size_t i = 0; i < trace.batch_norms.size(); ++i) {
    graph.batch_statistics(trace.batch_norms[i], mean, var);
    const Shape& s = graph.node(trace.batch_norms[i]).value.shape();
    const std::size_t count = numel(s) / s[1];
    const Real unbias = count > 1 ? static_cast<Real>(count) / static_cast<Real>(count - 1) : Real(1);
    auto rm = buffers_[2 * i].data();
    auto rv = buffers_[2 * i + 1].data();
    for (std::size_t c = 0; c < mean.size(); ++c) {
      rm[c] = (Real(1) - momentum) * rm[c] + momentum * mean[c];
      rv[c] = (Real(1) - momentum) * rv[c] + momentum * var[c] * unbias;
    }
  }
}

NodeId Model::run(Graph& g, NodeId input, std::span<const NodeId> params, Mode mode,
                  std::vector<NodeId>* batch_norms) const {
  switch (spec_.family) {
    case Family::Mlp: return run_mlp(g, input, params);
    case Family::PlainCnn: return run_plain_cnn(g, input, params);
    case Family::ResnetSmall: return run_resnet(g, input, params, mode, batch_norms);
  }
  throw InvalidArgument("unsupported model family");
}

NodeId Model::run_mlp(Graph& g, NodeId x, std::span<const NodeId> p) const {
  const std::size_t layers = spec_.layers.size() - 1;
  for (std::size_t i = 0; i < layers; ++i) {
    x = g.add(g.matmul(x, p[2 * i]), p[2 * i + 1]);
    if (i + 1 < layers) x = spec_.activation == Activation::Sigmoid ? g.sigmoid(x) : g.relu(x);
  }
  return x;
}

NodeId Model::run_plain_cnn(Graph& g, NodeId x, std::span<const NodeId> p) const {
  std::size_t k = 0;
  for (std::size_t convs : plain_cnn_stages(spec_.depth)) {
    for (std::size_t c = 0; c < convs; ++c) {
      x = g.relu(g.add(g.conv2d(x, p[k], {1, 1}), p[k + 1]));
      k += 2;
    }
    x = g.max_pool2d(x);
  }
  const Shape& s = g.value(x).shape();
  x = g.reshape(x, {s[0], s[1] * s[2] * s[3]});
  return g.add(g.matmul(x, p[k]), p[k + 1]);
}

NodeId Model::run_resnet(Graph& g, NodeId x, std::span<const NodeId> p, Mode mode,
                         std::vector<NodeId>* batch_norms) const {
  std::size_t k = 0;
  std::size_t bn_index = 0;
  auto bn = [&](NodeId in) {
    const NodeId gamma = p[k], beta = p[k + 1];
    k += 2;
    NodeId out;
    if (mode == Mode::Train) {
      out = g.batch_norm(in, gamma, beta, kBatchNormEpsilon);
      if (batch_norms) batch_norms->push_back(out);
    } else {
      out = g.batch_norm_inference(in, gamma, beta, buffers_[2 * bn_index].data(), buffers_[2 * bn_index + 1].data(),
                                   kBatchNormEpsilon);
    }
    ++bn_index;
    return out;
  };
  auto conv = [&](NodeId in, std::size_t stride, std::size_t padding) { return g.conv2d(in, p[k++], {stride, padding}); };

  x = g.relu(bn(conv(x, 1, 1)));
  std::size_t channels = 16;
  const std::size_t blocks = resnet_blocks(spec_.depth);
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t width = std::size_t{16} << s;
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      NodeId y = g.relu(bn(conv(x, stride, 1)));
      y = bn(conv(y, 1, 1));
      NodeId shortcut = x;
      if (width != channels) shortcut = bn(conv(x, stride, 0));
      x = g.relu(g.add(y, shortcut));
      channels = width;
    }
  }
  x = g.global_avg_pool(x);
  return g.add(g.matmul(x, p[k]), p[k + 1]);
}

}  // namespace models
ANNEALKD_END_NAMESPACE
