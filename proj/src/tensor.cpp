#include "annealkd/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <utility>

#include "annealkd/errors.hpp"

ANNEALKD_BEGIN_NAMESPACE

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor shape " + to_string(shape) + " has a zero dimension");
  }
}

}  // namespace

Tensor::Tensor(Shape shape, Real fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<Real> values) : shape_(std::move(shape)), data_(std::move(values)) {
  check_shape(shape_);
  if (data_.size() != numel(shape_)) {
    throw ShapeError("tensor shape " + to_string(shape_) + " needs " + std::to_string(numel(shape_)) +
                     " values, got " + std::to_string(data_.size()));
  }
}

Tensor Tensor::vector(std::initializer_list<Real> values) {
  return Tensor(Shape{values.size()}, std::vector<Real>(values));
}

Real Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ShapeError("reshape " + to_string(shape_) + " -> " + to_string(shape) + " changes element count");
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  for (Real v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

ANNEALKD_END_NAMESPACE
