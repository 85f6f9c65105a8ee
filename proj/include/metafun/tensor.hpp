#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace metafun {

/// Dense row-major array of doubles. Graph ops work on rank-2 tensors;
/// scalars are [1,1] and vectors are stored as single rows.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> elems);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor scalar(double value);
  static Tensor row(std::initializer_list<double> values);
  static Tensor row(std::span<const double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return elems_.size(); }
  bool empty() const noexcept { return elems_.empty(); }

  // Rank-2 accessors; throw DimensionError on other ranks.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator()(std::size_t r, std::size_t c) { return elems_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return elems_[r * shape_[1] + c]; }
  double& operator[](std::size_t i) { return elems_[i]; }
  double operator[](std::size_t i) const { return elems_[i]; }

  double* data() noexcept { return elems_.data(); }
  const double* data() const noexcept { return elems_.data(); }
  std::span<double> elems() noexcept { return elems_; }
  std::span<const double> elems() const noexcept { return elems_; }
  std::span<double> row_span(std::size_t r);
  std::span<const double> row_span(std::size_t r) const;

  /// Value of a [1,1] tensor.
  double item() const;

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  void fill(double value);
  Tensor reshaped(std::size_t rows, std::size_t cols) const;

  std::string shape_string() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> elems_;
};

/// Throws DimensionError unless `t` has rank 2.
void require_matrix(const Tensor& t, const char* what);
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

Tensor concat_rows(const Tensor& top, const Tensor& bottom);
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count);
Tensor transpose(const Tensor& t);

}  // namespace metafun
