#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "dmvi/errors.hpp"

namespace dmvi {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Most of the library treats a tensor as a matrix: `rows()` is the leading
/// extent and `cols()` is the product of the remaining extents. A rank-1
/// tensor of length n is viewed as a 1 x n row.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor row(std::vector<double> values);
  static Tensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<const double> row_span(std::size_t r) const;
  std::span<double> row_span(std::size_t r);

  /// Same payload, new shape; numel must agree.
  Tensor reshaped(Shape shape) const;
  Tensor row_copy(std::size_t r) const;
  /// Rows selected by index, in the given order.
  Tensor gather_rows(std::span<const std::size_t> indices) const;

  double item() const;
  bool all_finite() const noexcept;
  void fill(double value);

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Plain (non-differentiable) kernels.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a^T b without materializing the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Throws DimensionError naming both shapes unless they match exactly.
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

}  // namespace dmvi
