#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "annealkd/graph.hpp"
#include "annealkd/precision.hpp"
#include "annealkd/tensor.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace models {

enum class Family { Mlp, PlainCnn, ResnetSmall };
enum class Activation { Sigmoid, Relu };

std::string_view to_string(Family family);
std::string_view to_string(Activation activation);
Family parse_family(std::string_view text);
Activation parse_activation(std::string_view text);

/// Architecture description. For `Mlp`, `layers` lists every width from input
/// to output and `input_shape`/`output_dim` are derived from it. CNN families
/// use `depth`, `input_shape` = {channels, height, width} and `output_dim`.
struct ModelSpec {
  Family family = Family::Mlp;
  std::vector<std::size_t> layers;
  int depth = 0;
  Activation activation = Activation::Relu;
  Shape input_shape;
  std::size_t output_dim = 0;
  std::uint64_t seed = 0;
  /// When positive, first-layer weights and biases of an MLP are drawn from
  /// U(-s, s) instead of the activation-matched scheme. Useful for scalar
  /// inputs where hidden units must cover a frequency band.
  double first_layer_scale = 0;

  static ModelSpec mlp(std::vector<std::size_t> layers, Activation activation, std::uint64_t seed = 0);
  static ModelSpec plain_cnn(int depth, std::size_t classes, std::uint64_t seed = 0, Shape input = {3, 32, 32});
  static ModelSpec resnet_small(int depth, std::size_t classes, std::uint64_t seed = 0, Shape input = {3, 32, 32});

  /// Single-line `key=value;...` rendering stored in checkpoints.
  std::string describe() const;
  static ModelSpec parse(std::string_view description);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Throws InvalidArgument listing the allowed set when the spec is unusable.
void validate(const ModelSpec& spec);

/// True for architectures that are constructible but too slow for desk runs.
bool is_desk_scale(const ModelSpec& spec);

/// Nodes created while running a model inside a training graph.
struct TrainTrace {
  autograd::NodeId logits;
  std::vector<autograd::NodeId> params;
  std::vector<autograd::NodeId> batch_norms;
};

class Model {
 public:
  /// Builds and initializes the model; identical spec (including seed) yields
  /// identical parameters.
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const noexcept { return spec_; }

  std::span<Tensor> parameters() noexcept { return params_; }
  std::span<const Tensor> parameters() const noexcept { return params_; }
  const std::vector<std::string>& parameter_names() const noexcept { return names_; }
  std::size_t parameter_count() const;

  /// Non-trainable state (batch-norm running mean/variance), in declaration order.
  std::span<Tensor> buffers() noexcept { return buffers_; }
  std::span<const Tensor> buffers() const noexcept { return buffers_; }

  /// Raw logits (batch, output_dim) with inference-mode batch norm.
  Tensor forward(const Tensor& batch) const;

  /// Inference over a large input in fixed-size chunks.
  Tensor predict(const Tensor& inputs, std::size_t chunk = 256) const;

  /// Records a training-mode forward pass on `graph`, binding every parameter
  /// as a trainable node.
  TrainTrace forward_train(autograd::Graph& graph, autograd::NodeId input) const;

  /// Folds the batch statistics of a training pass into the running buffers.
  void update_running_stats(const autograd::Graph& graph, const TrainTrace& trace, Real momentum = Real(0.1));

  void check_input(const Tensor& batch) const;

 private:
  enum class Mode { Train, Inference };
  autograd::NodeId run(autograd::Graph& g, autograd::NodeId input, std::span<const autograd::NodeId> params,
                       Mode mode, std::vector<autograd::NodeId>* batch_norms) const;
  autograd::NodeId run_mlp(autograd::Graph& g, autograd::NodeId x, std::span<const autograd::NodeId> p) const;
  autograd::NodeId run_plain_cnn(autograd::Graph& g, autograd::NodeId x, std::span<const autograd::NodeId> p) const;
  autograd::NodeId run_resnet(autograd::Graph& g, autograd::NodeId x, std::span<const autograd::NodeId> p, Mode mode,
                              std::vector<autograd::NodeId>* batch_norms) const;

  void add_param(std::string name, Tensor value);

  ModelSpec spec_;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
  std::vector<Tensor> buffers_;
};

inline Model build_model(const ModelSpec& spec) { return Model(spec); }

}  // namespace models
ANNEALKD_END_NAMESPACE
