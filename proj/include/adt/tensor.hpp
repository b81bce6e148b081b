#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace adt {

using Real = double;
using Shape = std::vector<std::size_t>;

/// Dense row-major n-dimensional array of reals.
///
/// Batched activations are rank 2 (rows x features); parameter vectors and
/// per-example quantities are rank 1; losses are rank 0.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = 0.0);
  Tensor(Shape shape, std::vector<Real> data);

  static Tensor scalar(Real v);
  static Tensor vector(std::vector<Real> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<Real> data);
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty() && shape_.empty(); }

  // Matrix view helpers: rank 1 counts as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  std::vector<Real>& storage() { return data_; }
  const std::vector<Real>& storage() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }
  Real& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  Real at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  Real item() const;

  std::span<Real> row(std::size_t r);
  std::span<const Real> row(std::size_t r) const;

  Tensor reshaped(Shape shape) const;
  Tensor row_copy(std::size_t r) const;
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Gathers the given rows of a matrix into a new matrix.
Tensor gather_rows(const Tensor& m, std::span<const std::size_t> idx);
// Stacks rank-1 tensors of equal length into a matrix.
Tensor stack_rows(std::span<const Tensor> rows);

Real max_abs(std::span<const Real> v);
Real l2_norm(std::span<const Real> v);

}  // namespace adt
