#include "adt/hvp.hpp"

#include <algorithm>

#include "adt/error.hpp"

namespace adt {

Tensor hvp(const GradientFn& grad, const Tensor& x, const Tensor& v) {
  if (v.shape() != x.shape()) throw InvalidArgument("hvp: direction shape does not match input");
  const Real vn = l2_norm(v.data());
  if (!(vn > 0)) throw InvalidArgument("hvp: direction must be nonzero");
  const Real h = 1e-4 * std::max<Real>(1.0, max_abs(x.data()));
  Tensor xp = x, xm = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real u = v[i] / vn;
    xp[i] += h * u;
    xm[i] -= h * u;
  }
  const Tensor gp = grad(xp);
  const Tensor gm = grad(xm);
  if (gp.shape() != x.shape() || gm.shape() != x.shape()) throw InvalidArgument("hvp: gradient shape mismatch");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * h) * vn;
  if (!out.all_finite()) throw NumericError("hvp: non-finite result");
  return out;
}

}  // namespace adt
