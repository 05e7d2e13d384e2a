#pragma once

#include <span>
#include <vector>

#include "annealkd/precision.hpp"
#include "annealkd/tensor.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace autograd {

struct SgdOptions {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  friend bool operator==(const SgdOptions&, const SgdOptions&) = default;
};

/// SGD with classical momentum; weight decay is folded into the gradient:
///   v <- momentum * v + (grad + weight_decay * param)
///   param <- param - lr * v
class SgdMomentum {
 public:
  explicit SgdMomentum(SgdOptions options);

  /// Velocity buffers are created zero-filled on the first step and must
  /// match `params` in count and shape afterwards.
  void step(std::span<Tensor> params, std::span<const Tensor> grads);

  void set_learning_rate(double lr);
  const SgdOptions& options() const noexcept { return options_; }
  const std::vector<Tensor>& velocities() const noexcept { return velocities_; }
  std::vector<Tensor>& velocities() noexcept { return velocities_; }

 private:
  SgdOptions options_;
  std::vector<Tensor> velocities_;
};

}  // namespace autograd
ANNEALKD_END_NAMESPACE
