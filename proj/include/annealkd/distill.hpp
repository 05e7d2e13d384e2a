#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "annealkd/graph.hpp"
#include "annealkd/precision.hpp"
#include "annealkd/tensor.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace distill {

/// Loss used while matching the annealed teacher.
enum class StageOneLoss {
  Mse,    // squared distance to the annealed teacher logits (default)
  KlDiv,  // ablation: T^2 * KL(softmax(z_t/T) || softmax(z_s/T)) at the scheduled T
};

/// Temperatures run tau_max, tau_max-1, ..., 1 with `epochs_per_temperature`
/// epochs each, followed by `fine_tune_epochs` epochs on hard labels.
struct AnnealingSchedule {
  int tau_max = 10;
  int epochs_per_temperature = 16;
  int fine_tune_epochs = 160;
  StageOneLoss stage_one_loss = StageOneLoss::Mse;

  std::vector<int> temperatures() const;
  std::size_t stage_one_epochs() const;
  void validate() const;

  friend bool operator==(const AnnealingSchedule&, const AnnealingSchedule&) = default;
};

struct VanillaKDConfig {
  double temperature = 1.0;
  double lambda = 0.5;

  void validate() const;

  friend bool operator==(const VanillaKDConfig&, const VanillaKDConfig&) = default;
};

/// Phi(T) = 1 - (T - 1) / tau_max for integer 1 <= T <= tau_max.
double annealing_factor(int temperature, int tau_max);

// Graph-building losses. Teacher quantities are passed as plain tensors, so
// no gradient can reach them.

/// ||z_s - phi * z_t||^2 per sample, averaged over the batch.
autograd::NodeId annealing_kd_loss(autograd::Graph& g, autograd::NodeId student_logits, const Tensor& teacher_logits,
                                   Real phi);

/// Temperature-scaled KL stage-one ablation: T^2 * KL(softmax(z_t/T) || softmax(z_s/T)).
/// Single-output heads are treated as binary logits [z, 0].
autograd::NodeId annealing_kl_loss(autograd::Graph& g, autograd::NodeId student_logits, const Tensor& teacher_logits,
                                   Real temperature);

/// (1 - lambda) * CE(y, softmax(z_s)) + lambda * T^2 * KL(softmax(z_t/T) || softmax(z_s/T)).
autograd::NodeId vanilla_kd_loss(autograd::Graph& g, autograd::NodeId student_logits, const Tensor& teacher_logits,
                                 std::span<const std::size_t> labels, const VanillaKDConfig& config);

/// Regression counterpart of vanilla KD: (1 - lambda) * MSE(z_s, y) + lambda * MSE(z_s, z_t).
autograd::NodeId regression_kd_loss(autograd::Graph& g, autograd::NodeId student_logits, const Tensor& teacher_logits,
                                    const Tensor& targets, const VanillaKDConfig& config);

autograd::NodeId cross_entropy_loss(autograd::Graph& g, autograd::NodeId student_logits,
                                    std::span<const std::size_t> labels);

/// Squared error summed over output dimensions, averaged over the batch.
autograd::NodeId regression_fit_loss(autograd::Graph& g, autograd::NodeId prediction, const Tensor& target);

// Value-only conveniences over plain tensors.
double annealing_kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, double phi);
double annealing_kl_loss(const Tensor& student_logits, const Tensor& teacher_logits, double temperature);
double vanilla_kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, std::span<const std::size_t> labels,
                       const VanillaKDConfig& config);
double regression_kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, const Tensor& targets,
                          const VanillaKDConfig& config);
double cross_entropy_loss(const Tensor& student_logits, std::span<const std::size_t> labels);
double regression_fit_loss(const Tensor& prediction, const Tensor& target);

}  // namespace distill
ANNEALKD_END_NAMESPACE
