#include "histonet/tensorkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "histonet/errors.hpp"

namespace histonet::tk {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) {
    n *= extent;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "," : "") << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) {
    throw DimensionError("tensor shape must have at least one axis");
  }
  for (std::size_t extent : shape) {
    if (extent == 0) {
      throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
    }
  }
}

}  // namespace

Tensor::Tensor() : Tensor(Shape{1}) {}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<Impl>()) {
  validate_shape(shape);
  impl_->values.assign(shape_size(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<Impl>()) {
  validate_shape(shape);
  if (shape_size(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape()));
  }
  return impl_->shape[axis];
}

double& Tensor::at(std::size_t c, std::size_t y, std::size_t x) {
  const Shape& s = impl_->shape;
  return impl_->values[(c * s[1] + y) * s[2] + x];
}

double Tensor::at(std::size_t c, std::size_t y, std::size_t x) const {
  const Shape& s = impl_->shape;
  return impl_->values[(c * s[1] + y) * s[2] + x];
}

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  }
  return impl_->values[0];
}

std::span<double> Tensor::grad() {
  if (impl_->grad.empty()) {
    impl_->grad.assign(impl_->values.size(), 0.0);
  }
  return impl_->grad;
}

std::span<const double> Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) {
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }
}

Tensor Tensor::clone() const {
  Tensor copy(impl_->shape, impl_->values);
  copy.impl_->grad = impl_->grad;
  copy.impl_->requires_grad = impl_->requires_grad;
  return copy;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw DimensionError("cannot reshape " + shape_string(this->shape()) + " to " +
                         shape_string(shape));
  }
  return Tensor(std::move(shape), impl_->values);
}

}  // namespace histonet::tk
