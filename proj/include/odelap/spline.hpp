#pragma once

#include <algorithm>
#include <vector>

#include "odelap/common.hpp"

namespace odelap {

/// Cubic B-spline basis on a clamped knot vector.
struct SplineBasis {
  static constexpr int degree = 3;
  std::vector<double> knots;  // nondecreasing, length n_basis + degree + 1
  int n_basis = 0;

  double t_min() const { return knots[degree]; }
  double t_max() const { return knots[knots.size() - degree - 1]; }
};

/// Uniform clamped knots over [a, b] with n_basis cubic basis functions.
inline SplineBasis make_uniform_clamped_basis(double a, double b, int n_basis) {
  require(n_basis >= 4, "cubic basis needs at least 4 functions");
  require(b > a, "basis window must have positive length");
  SplineBasis basis;
  basis.n_basis = n_basis;
  const int deg = SplineBasis::degree;
  const int n_spans = n_basis - deg;  // interior spans
  basis.knots.resize(n_basis + deg + 1);
  for (int i = 0; i <= deg; ++i) basis.knots[i] = a;
  for (int i = 1; i < n_spans; ++i)
    basis.knots[deg + i] = a + (b - a) * static_cast<double>(i) / n_spans;
  for (int i = 0; i <= deg; ++i) basis.knots[n_basis + i] = b;
  return basis;
}

/// All basis values at t (Cox-de Boor), length n_basis.
inline Vector eval_spline_basis(const SplineBasis& basis, double t) {
  const int deg = SplineBasis::degree;
  const auto& knots = basis.knots;
  require(t >= basis.t_min() && t <= basis.t_max(),
          "spline evaluation point outside the knot range");

  // Knot span containing t; the right boundary belongs to the last span.
  int span = deg;
  const int last_span = basis.n_basis - 1;
  while (span < last_span && t >= knots[span + 1]) ++span;

  // Triangular Cox-de Boor recursion for the deg+1 nonzero functions.
  std::vector<double> vals(deg + 1, 0.0);
  vals[0] = 1.0;
  for (int d = 1; d <= deg; ++d) {
    double saved = 0.0;
    for (int r = 0; r < d; ++r) {
      const double left = knots[span - d + 1 + r];
      const double right = knots[span + 1 + r];
      const double denom = right - left;
      const double term = denom > 0.0 ? vals[r] / denom : 0.0;
      vals[r] = saved + (right - t) * term;
      saved = (t - left) * term;
    }
    vals[d] = saved;
  }

  Vector out = Vector::Zero(basis.n_basis);
  for (int r = 0; r <= deg; ++r) out[span - deg + r] = vals[r];
  return out;
}

}  // namespace odelap
