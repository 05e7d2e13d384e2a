#include "annealkd/distill.hpp"

#include <string>

#include "annealkd/errors.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace distill {

using autograd::Graph;
using autograd::NodeId;

std::vector<int> AnnealingSchedule::temperatures() const {
  validate();
  std::vector<int> out;
  for (int t = tau_max; t >= 1; --t) out.push_back(t);
  return out;
}

std::size_t AnnealingSchedule::stage_one_epochs() const {
  validate();
  return static_cast<std::size_t>(tau_max) * static_cast<std::size_t>(epochs_per_temperature);
}

void AnnealingSchedule::validate() const {
  if (tau_max < 1) throw InvalidArgument("annealing: tau_max must be >= 1, got " + std::to_string(tau_max));
  if (epochs_per_temperature < 1) {
    throw InvalidArgument("annealing: epochs per temperature must be >= 1, got " + std::to_string(epochs_per_temperature));
  }
  if (fine_tune_epochs < 0) throw InvalidArgument("annealing: stage-two epochs must be >= 0");
}

void VanillaKDConfig::validate() const {
  if (!(temperature > 0)) throw InvalidArgument("kd: temperature must be positive, got " + std::to_string(temperature));
  if (!(lambda >= 0 && lambda <= 1)) throw InvalidArgument("kd: lambda must lie in [0,1], got " + std::to_string(lambda));
}

double annealing_factor(int temperature, int tau_max) {
  if (tau_max < 1 || temperature < 1 || temperature > tau_max) {
    throw InvalidArgument("annealing_factor: temperature " + std::to_string(temperature) + " outside [1, " +
                          std::to_string(tau_max) + "]");
  }
  // Same value as 1 - (T-1)/tau_max, written so both endpoints are exact.
  return static_cast<double>(tau_max - temperature + 1) / static_cast<double>(tau_max);
}

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

// Appends an implicit zero logit to single-output heads so that a softmax
// over them is a proper Bernoulli distribution.
NodeId as_distribution_logits(Graph& g, NodeId logits) {
  const Tensor& z = g.value(logits);
  if (z.rank() != 2) throw ShapeError("kl loss: logits must be (batch, classes), got " + to_string(z.shape()));
  if (z.dim(1) != 1) return logits;
  return g.matmul(logits, g.constant(Tensor(Shape{1, 2}, std::vector<Real>{1, 0})));
}

// T^2 * KL(softmax(teacher/T) || softmax(student/T)).
NodeId scaled_kl(Graph& g, NodeId student, const Tensor& teacher, Real temperature) {
  const NodeId s = as_distribution_logits(g, student);
  const NodeId t = as_distribution_logits(g, g.constant(teacher));
  const NodeId kl = g.kl_divergence(g.log_softmax(t, temperature), g.log_softmax(s, temperature));
  return g.scale(kl, temperature * temperature);
}

}  // namespace

NodeId annealing_kd_loss(Graph& g, NodeId student_logits, const Tensor& teacher_logits, Real phi) {
  require_same_shape("annealing_kd_loss", g.value(student_logits), teacher_logits);
  Tensor target = teacher_logits;
  for (Real& v : target.data()) v *= phi;
  return g.mse(student_logits, g.constant(std::move(target)));
}

NodeId annealing_kl_loss(Graph& g, NodeId student_logits, const Tensor& teacher_logits, Real temperature) {
  require_same_shape("annealing_kl_loss", g.value(student_logits), teacher_logits);
  if (!(temperature > 0)) throw InvalidArgument("annealing_kl_loss: temperature must be positive");
  return scaled_kl(g, student_logits, teacher_logits, temperature);
}

NodeId vanilla_kd_loss(Graph& g, NodeId student_logits, const Tensor& teacher_logits,
                       std::span<const std::size_t> labels, const VanillaKDConfig& config) {
  config.validate();
  require_same_shape("vanilla_kd_loss", g.value(student_logits), teacher_logits);
  const auto temperature = static_cast<Real>(config.temperature);
  const auto lambda = static_cast<Real>(config.lambda);
  const NodeId hard = g.scale(g.cross_entropy(student_logits, labels), Real(1) - lambda);
  const NodeId soft = g.scale(scaled_kl(g, student_logits, teacher_logits, temperature), lambda);
  return g.add(hard, soft);
}

NodeId regression_kd_loss(Graph& g, NodeId student_logits, const Tensor& teacher_logits, const Tensor& targets,
                          const VanillaKDConfig& config) {
  config.validate();
  require_same_shape("regression_kd_loss", g.value(student_logits), teacher_logits);
  require_same_shape("regression_kd_loss", g.value(student_logits), targets);
  const auto lambda = static_cast<Real>(config.lambda);
  const NodeId hard = g.scale(g.mse(student_logits, g.constant(targets)), Real(1) - lambda);
  const NodeId soft = g.scale(g.mse(student_logits, g.constant(teacher_logits)), lambda);
  return g.add(hard, soft);
}

NodeId cross_entropy_loss(Graph& g, NodeId student_logits, std::span<const std::size_t> labels) {
  return g.cross_entropy(student_logits, labels);
}

NodeId regression_fit_loss(Graph& g, NodeId prediction, const Tensor& target) {
  require_same_shape("regression_fit_loss", g.value(prediction), target);
  return g.mse(prediction, g.constant(target));
}

double annealing_kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, double phi) {
  Graph g;
  return g.value(annealing_kd_loss(g, g.constant(student_logits), teacher_logits, static_cast<Real>(phi))).item();
}

double annealing_kl_loss(const Tensor& student_logits, const Tensor& teacher_logits, double temperature) {
  Graph g;
  return g.value(annealing_kl_loss(g, g.constant(student_logits), teacher_logits, static_cast<Real>(temperature)))
      .item();
}

double vanilla_kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, std::span<const std::size_t> labels,
                       const VanillaKDConfig& config) {
  Graph g;
  return g.value(vanilla_kd_loss(g, g.constant(student_logits), teacher_logits, labels, config)).item();
}

double regression_kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, const Tensor& targets,
                          const VanillaKDConfig& config) {
  Graph g;
  return g.value(regression_kd_loss(g, g.constant(student_logits), teacher_logits, targets, config)).item();
}

double cross_entropy_loss(const Tensor& student_logits, std::span<const std::size_t> labels) {
  Graph g;
  return g.value(cross_entropy_loss(g, g.constant(student_logits), labels)).item();
}

double regression_fit_loss(const Tensor& prediction, const Tensor& target) {
  Graph g;
  return g.value(regression_fit_loss(g, g.constant(prediction), target)).item();
}

}  // namespace distill
ANNEALKD_END_NAMESPACE
