#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace organ::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D access; rank must be 2.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double* row(std::size_t r) { return data_.data() + r * row_stride(); }
  const double* row(std::size_t r) const { return data_.data() + r * row_stride(); }

  void fill(double value);
  void reshape(Shape shape);

  bool all_finite() const;
  double max_abs() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  std::size_t row_stride() const;

  Shape shape_;
  std::vector<double> data_;
};

/// Throws DimensionError with `what` when the shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace organ::nn
