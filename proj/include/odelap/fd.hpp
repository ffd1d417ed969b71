#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "odelap/common.hpp"
#include "odelap/model.hpp"

namespace odelap {

inline double fd_step(double value, double rel = 1e-5) {
  return rel * std::max(1.0, std::abs(value));
}

/// Central-difference Jacobian of a vector-valued map.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f,
                          const Vector& x, double rel_step = 1e-5) {
  const Vector f0 = f(x);
  Matrix J(f0.size(), x.size());
  for (int a = 0; a < x.size(); ++a) {
    const double h = fd_step(x[a], rel_step);
    Vector xp = x, xm = x;
    xp[a] += h;
    xm[a] -= h;
    J.col(a) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

/// Central second differences of a scalar map (dense Hessian).
inline Matrix fd_hessian(const std::function<double(const Vector&)>& f,
                         const Vector& x, double rel_step = 1e-4) {
  const int d = static_cast<int>(x.size());
  Matrix H(d, d);
  const double f0 = f(x);
  std::vector<double> hs(d);
  for (int a = 0; a < d; ++a) hs[a] = fd_step(x[a], rel_step);
  for (int a = 0; a < d; ++a) {
    Vector xp = x, xm = x;
    xp[a] += hs[a];
    xm[a] -= hs[a];
    H(a, a) = (f(xp) - 2.0 * f0 + f(xm)) / (hs[a] * hs[a]);
    for (int b = a + 1; b < d; ++b) {
      Vector xpp = x, xpm = x, xmp = x, xmm = x;
      xpp[a] += hs[a]; xpp[b] += hs[b];
      xpm[a] += hs[a]; xpm[b] -= hs[b];
      xmp[a] -= hs[a]; xmp[b] += hs[b];
      xmm[a] -= hs[a]; xmm[b] -= hs[b];
      H(a, b) = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * hs[a] * hs[b]);
      H(b, a) = H(a, b);
    }
  }
  return H;
}

struct FdJacobians {
  Matrix jac_x;      // p x p
  Matrix jac_theta;  // p x q
};

/// order-1 oracle: central differences of rhs w.r.t. x and theta.
inline FdJacobians fd_model_jacobians(const OdeModel& model, const Vector& x,
                                      double t, const Vector& theta,
                                      double rel_step = 1e-5) {
  check_point(model, x, theta);
  FdJacobians out;
  out.jac_x = fd_jacobian(
      [&](const Vector& xx) { return model.rhs(xx, t, theta); }, x, rel_step);
  out.jac_theta = fd_jacobian(
      [&](const Vector& th) { return model.rhs(x, t, th); }, theta, rel_step);
  return out;
}

/// order-2 oracle: second differences of rhs w.r.t. u = (x, theta).
inline std::vector<Matrix> fd_model_hessians(const OdeModel& model,
                                             const Vector& x, double t,
                                             const Vector& theta,
                                             double rel_step = 1e-4) {
  check_point(model, x, theta);
  const int p = model.p, q = model.q;
  Vector u(p + q);
  u << x, theta;
  std::vector<Matrix> H;
  H.reserve(p);
  for (int j = 0; j < p; ++j) {
    H.push_back(fd_hessian(
        [&](const Vector& uu) {
          return model.rhs(uu.head(p), t, uu.tail(q))[j];
        },
        u, rel_step));
  }
  return H;
}

/// Sup-norm relative disagreement between two equally-shaped matrices.
inline double rel_error(const Matrix& a, const Matrix& b) {
  const double scale =
      std::max({1.0, a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

inline double rel_error(const Vector& a, const Vector& b) {
  const double scale =
      std::max({1.0, a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace odelap
