#pragma once

// Dense oracles for the spectral probes: cyclic Jacobi eigenvalues and a
// second-difference Hessian built from loss values only.

#include <cmath>
#include <functional>
#include <vector>

namespace adt::testing {

// Eigenvalues of a symmetric n x n row-major matrix.
inline std::vector<double> jacobi_eigenvalues(std::vector<double> a, std::size_t n) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i * n + i];
  return ev;
}

inline double dominant_magnitude(const std::vector<double>& ev) {
  double m = 0;
  for (double e : ev) m = std::max(m, std::abs(e));
  return m;
}

// H_ij by four-point second differences of f.
inline std::vector<double> fd_hessian(const std::function<double(const std::vector<double>&)>& f,
                                      const std::vector<double>& x, double h = 1e-3) {
  const auto n = x.size();
  std::vector<double> hess(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      auto at = [&](double si, double sj) {
        auto p = x;
        p[i] += si * h;
        p[j] += sj * h;
        return f(p);
      };
      const double v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4 * h * h);
      hess[i * n + j] = hess[j * n + i] = v;
    }
  return hess;
}

}  // namespace adt::testing
