#include "annealkd/optim.hpp"

#include <string>

#include "annealkd/errors.hpp"

ANNEALKD_BEGIN_NAMESPACE
namespace autograd {

namespace {

void validate(const SgdOptions& o) {
  if (!(o.learning_rate > 0)) throw InvalidArgument("sgd: learning rate must be positive");
  if (!(o.momentum >= 0 && o.momentum < 1)) throw InvalidArgument("sgd: momentum must lie in [0,1)");
  if (!(o.weight_decay >= 0)) throw InvalidArgument("sgd: weight decay must be non-negative");
}

}  // namespace

SgdMomentum::SgdMomentum(SgdOptions options) : options_(options) { validate(options_); }

void SgdMomentum::set_learning_rate(double lr) {
  SgdOptions next = options_;
  next.learning_rate = lr;
  validate(next);
  options_ = next;
}

void SgdMomentum::step(std::span<Tensor> params, std::span<const Tensor> grads) {
  if (grads.size() != params.size()) {
    throw InvalidArgument("sgd: " + std::to_string(grads.size()) + " gradients for " +
                          std::to_string(params.size()) + " parameters");
  }
  if (velocities_.empty()) {
    velocities_.reserve(params.size());
    for (const Tensor& p : params) velocities_.emplace_back(p.shape());
  }
  if (velocities_.size() != params.size()) throw InvalidArgument("sgd: parameter set changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape()) {
      throw ShapeError("sgd: gradient " + std::to_string(i) + " has shape " + to_string(grads[i].shape()) +
                       ", parameter has " + to_string(params[i].shape()));
    }
    if (velocities_[i].shape() != params[i].shape()) throw ShapeError("sgd: velocity shape drifted from parameter");
  }

  const Real lr = static_cast<Real>(options_.learning_rate);
  const Real mo = static_cast<Real>(options_.momentum);
  const Real wd = static_cast<Real>(options_.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto v = velocities_[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = mo * v[j] + (g[j] + wd * p[j]);
      p[j] -= lr * v[j];
    }
  }
}

}  // namespace autograd
ANNEALKD_END_NAMESPACE
