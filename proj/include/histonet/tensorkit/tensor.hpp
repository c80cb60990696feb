#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace histonet::tk {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Tensor is a handle: copies share storage, which is what lets a graph
/// node, the model's parameter table and the optimizer all refer to the
/// same weights. Use clone() for an independent deep copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return impl_->values.size(); }

  std::span<double> values() { return impl_->values; }
  std::span<const double> values() const { return impl_->values; }
  double* data() { return impl_->values.data(); }
  const double* data() const { return impl_->values.data(); }

  double& operator[](std::size_t i) { return impl_->values[i]; }
  double operator[](std::size_t i) const { return impl_->values[i]; }

  /// Element of a rank-3 [C,H,W] tensor.
  double& at(std::size_t c, std::size_t y, std::size_t x);
  double at(std::size_t c, std::size_t y, std::size_t x) const;

  /// Scalar value of a one-element tensor.
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer, allocated (zero-filled) on first access.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();
  void drop_grad() { impl_->grad.clear(); impl_->grad.shrink_to_fit(); }

  Tensor clone() const;
  /// Same values, new shape; shares nothing with the original.
  Tensor reshaped(Shape shape) const;
  bool shares_storage_with(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

}  // namespace histonet::tk
