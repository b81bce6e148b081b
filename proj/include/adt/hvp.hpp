#pragma once

#include <functional>

#include "adt/tensor.hpp"

namespace adt {

// Maps an input point to the gradient of a scalar loss at that point.
using GradientFn = std::function<Tensor(const Tensor& x)>;

/// Hessian-vector product by central differences of gradients:
///   H v ~= (grad(x + h u) - grad(x - h u)) / (2h) * |v|,  u = v / |v|,
/// with h = 1e-4 * max(1, |x|_inf).
Tensor hvp(const GradientFn& grad, const Tensor& x, const Tensor& v);

}  // namespace adt
