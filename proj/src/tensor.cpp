#include "metafun/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "metafun/errors.hpp"

namespace metafun {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), elems_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> elems)
    : shape_(std::move(shape)), elems_(std::move(elems)) {
  if (product(shape_) != elems_.size()) {
    throw DimensionError("tensor: shape " + shape_string() + " does not match " +
                         std::to_string(elems_.size()) + " elements");
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Tensor({rows, cols}, fill);
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, value); }

Tensor Tensor::row(std::initializer_list<double> values) {
  return Tensor({1, values.size()}, std::vector<double>(values));
}

Tensor Tensor::row(std::span<const double> values) {
  return Tensor({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> elems;
  elems.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("tensor: ragged row list");
    elems.insert(elems.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(elems));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t = matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  require_matrix(*this, "rows()");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  require_matrix(*this, "cols()");
  return shape_[1];
}

std::span<double> Tensor::row_span(std::size_t r) {
  const std::size_t c = cols();
  return {elems_.data() + r * c, c};
}

std::span<const double> Tensor::row_span(std::size_t r) const {
  const std::size_t c = cols();
  return {elems_.data() + r * c, c};
}

double Tensor::item() const {
  if (elems_.size() != 1) throw DimensionError("item(): tensor " + shape_string() + " is not a scalar");
  return elems_[0];
}

void Tensor::fill(double value) { std::fill(elems_.begin(), elems_.end(), value); }

Tensor Tensor::reshaped(std::size_t rows, std::size_t cols) const {
  if (rows * cols != elems_.size()) {
    throw DimensionError("reshape: cannot view " + shape_string() + " as [" + std::to_string(rows) + "," +
                         std::to_string(cols) + "]");
  }
  return Tensor({rows, cols}, elems_);
}

std::string Tensor::shape_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape_[i]);
  }
  return s + "]";
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + ": expected rank-2 tensor, got " + t.shape_string());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.elems().begin(), t.elems().end(), [](double v) { return std::isfinite(v); });
}

Tensor concat_rows(const Tensor& top, const Tensor& bottom) {
  if (top.cols() != bottom.cols()) throw DimensionError("concat_rows: column mismatch");
  Tensor out = Tensor::matrix(top.rows() + bottom.rows(), top.cols());
  std::copy(top.elems().begin(), top.elems().end(), out.data());
  std::copy(bottom.elems().begin(), bottom.elems().end(), out.data() + top.size());
  return out;
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count) {
  if (begin + count > t.rows()) throw DimensionError("slice_rows: range out of bounds");
  const std::size_t c = t.cols();
  std::vector<double> elems(t.data() + begin * c, t.data() + (begin + count) * c);
  return Tensor({count, c}, std::move(elems));
}

Tensor transpose(const Tensor& t) {
  Tensor out = Tensor::matrix(t.cols(), t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out(j, i) = t(i, j);
  return out;
}

}  // namespace metafun
