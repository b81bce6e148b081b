#include "adt/tensor.hpp"

#include <cmath>
#include <sstream>

#include "adt/error.hpp"

namespace adt {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, Real fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<Real> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw InvalidArgument("tensor: shape " + shape_string(shape_) + " does not match " +
                          std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }

Tensor Tensor::vector(std::vector<Real> v) {
  const auto n = v.size();
  return Tensor(Shape{n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<Real> data) {
  return Tensor(Shape{rows, cols}, std::move(data));
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 2) return shape_[0];
  return 1;
}

std::size_t Tensor::cols() const {
  if (shape_.size() == 2) return shape_[1];
  if (shape_.size() == 1) return shape_[0];
  return 1;
}

Real Tensor::item() const {
  if (data_.size() != 1) throw InvalidArgument("tensor: item() on non-scalar " + shape_string(shape_));
  return data_[0];
}

std::span<Real> Tensor::row(std::size_t r) {
  const auto c = cols();
  return std::span<Real>(data_).subspan(r * c, c);
}

std::span<const Real> Tensor::row(std::size_t r) const {
  const auto c = cols();
  return std::span<const Real>(data_).subspan(r * c, c);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw InvalidArgument("tensor: cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::row_copy(std::size_t r) const {
  auto s = row(r);
  return Tensor::vector(std::vector<Real>(s.begin(), s.end()));
}

bool Tensor::all_finite() const {
  for (Real v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> idx) {
  const auto c = m.cols();
  std::vector<Real> out;
  out.reserve(idx.size() * c);
  for (auto i : idx) {
    if (i >= m.rows()) throw InvalidArgument("gather_rows: index out of range");
    auto r = m.row(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor::matrix(idx.size(), c, std::move(out));
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) return Tensor(Shape{0, 0});
  const auto c = rows.front().size();
  std::vector<Real> out;
  out.reserve(rows.size() * c);
  for (const auto& r : rows) {
    if (r.size() != c) throw InvalidArgument("stack_rows: ragged rows");
    out.insert(out.end(), r.data().begin(), r.data().end());
  }
  return Tensor::matrix(rows.size(), c, std::move(out));
}

Real max_abs(std::span<const Real> v) {
  Real m = 0;
  for (Real x : v) m = std::max(m, std::abs(x));
  return m;
}

Real l2_norm(std::span<const Real> v) {
  Real s = 0;
  for (Real x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace adt
