#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "odelap/common.hpp"
#include "odelap/model.hpp"

namespace odelap {

struct SolveOptions {
  double refine_tol = 1e-9;  // sup-norm agreement between halvings on the grid
  int initial_subdivision = 1;
  int max_refine_levels = 16;
  int fixed_subdivision = 0;  // > 0: skip refinement, use this many substeps
  double magnitude_cap = 1e12;
};

/// Solution derivatives on a grid.  Direction ordering is (theta, x0).
struct SensitivityBundle {
  std::vector<double> times;
  Matrix states;                            // (n+1) x p
  std::vector<Matrix> jac_theta;            // per time, p x q
  std::vector<Matrix> jac_x0;               // per time, p x p
  std::vector<std::vector<Matrix>> hess;    // per time, per output, (q+p)^2
  bool conditioning_warning = false;
};

namespace detail {

using GridRhs = std::function<Vector(const Vector&, double)>;

inline Matrix integrate_fixed(const GridRhs& rhs, const Vector& y0,
                              const std::vector<double>& grid, int n_sub) {
  const int n = static_cast<int>(grid.size());
  Matrix out(n, y0.size());
  Vector y = y0;
  out.row(0) = y;
  for (int i = 1; i < n; ++i) {
    const double h = (grid[i] - grid[i - 1]) / n_sub;
    double t = grid[i - 1];
    for (int s = 0; s < n_sub; ++s) {
      const Vector k1 = h * rhs(y, t);
      const Vector k2 = h * rhs(y + 0.5 * k1, t + 0.5 * h);
      const Vector k3 = h * rhs(y + 0.5 * k2, t + 0.5 * h);
      const Vector k4 = h * rhs(y + k3, t + h);
      y += (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
      t += h;
      if (!y.allFinite())
        throw IntegrationError("solution diverged during integration", t);
    }
    out.row(i) = y;
  }
  return out;
}

// Mixed relative/absolute sup-norm disagreement between two grid solutions.
inline double grid_disagreement(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) {
      const double scale = std::max(1.0, std::abs(a(i, j)));
      worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / scale);
    }
  return worst;
}

/// Fixed-step RK4 on the grid, substeps doubled until halvings agree.
inline Matrix integrate_refined(const GridRhs& rhs, const Vector& y0,
                                const std::vector<double>& grid,
                                const SolveOptions& opts) {
  if (opts.fixed_subdivision > 0)
    return integrate_fixed(rhs, y0, grid, opts.fixed_subdivision);
  int n_sub = opts.initial_subdivision;
  // A too-coarse level may spuriously blow up; keep halving until two
  // finite levels agree, and only propagate divergence from the last one.
  bool have_prev = false;
  Matrix prev;
  for (int level = 0; level <= opts.max_refine_levels; ++level) {
    Matrix next;
    try {
      next = integrate_fixed(rhs, y0, grid, n_sub);
    } catch (const IntegrationError&) {
      if (level == opts.max_refine_levels) throw;
      have_prev = false;
      n_sub *= 2;
      continue;
    }
    if (have_prev && grid_disagreement(next, prev) < opts.refine_tol)
      return next;
    prev = std::move(next);
    have_prev = true;
    n_sub *= 2;
  }
  return prev;
}

inline void check_grid(const std::vector<double>& grid) {
  require(grid.size() >= 2, "grid needs at least two points");
  for (size_t i = 1; i < grid.size(); ++i)
    require(grid[i] > grid[i - 1], "grid times must be strictly increasing");
}

}  // namespace detail

/// High-accuracy fixed-step RK4 solution of the plain model on the grid.
inline Matrix solve_reference(const OdeModel& model, const Vector& x0,
                              const Vector& theta,
                              const std::vector<double>& grid,
                              const SolveOptions& opts = {}) {
  check_point(model, x0, theta);
  detail::check_grid(grid);
  auto rhs = [&](const Vector& y, double t) { return model.rhs(y, t, theta); };
  return detail::integrate_refined(rhs, x0, grid, opts);
}

/// Independent embedded Dormand-Prince 5(4) integrator; test oracle only.
inline Matrix solve_adaptive(const OdeModel& model, const Vector& x0,
                             const Vector& theta,
                             const std::vector<double>& grid,
                             double tol = 1e-10) {
  check_point(model, x0, theta);
  detail::check_grid(grid);
  auto f = [&](const Vector& y, double t) { return model.rhs(y, t, theta); };

  const int n = static_cast<int>(grid.size());
  Matrix out(n, model.p);
  Vector y = x0;
  out.row(0) = y;
  for (int i = 1; i < n; ++i) {
    double t = grid[i - 1];
    const double t_end = grid[i];
    double h = (t_end - t) / 4.0;
    int guard = 0;
    while (t < t_end) {
      if (++guard > 1000000)
        throw IntegrationError("adaptive integrator stalled", t);
      h = std::min(h, t_end - t);
      const Vector k1 = f(y, t);
      const Vector k2 = f(y + h * (k1 / 5.0), t + h / 5.0);
      const Vector k3 = f(y + h * (3.0 / 40.0 * k1 + 9.0 / 40.0 * k2),
                          t + 3.0 / 10.0 * h);
      const Vector k4 = f(y + h * (44.0 / 45.0 * k1 - 56.0 / 15.0 * k2 +
                                   32.0 / 9.0 * k3),
                          t + 4.0 / 5.0 * h);
      const Vector k5 =
          f(y + h * (19372.0 / 6561.0 * k1 - 25360.0 / 2187.0 * k2 +
                     64448.0 / 6561.0 * k3 - 212.0 / 729.0 * k4),
            t + 8.0 / 9.0 * h);
      const Vector k6 =
          f(y + h * (9017.0 / 3168.0 * k1 - 355.0 / 33.0 * k2 +
                     46732.0 / 5247.0 * k3 + 49.0 / 176.0 * k4 -
                     5103.0 / 18656.0 * k5),
            t + h);
      const Vector y5 = y + h * (35.0 / 384.0 * k1 + 500.0 / 1113.0 * k3 +
                                 125.0 / 192.0 * k4 - 2187.0 / 6784.0 * k5 +
                                 11.0 / 84.0 * k6);
      const Vector k7 = f(y5, t + h);
      const Vector y4 =
          y + h * (5179.0 / 57600.0 * k1 + 7571.0 / 16695.0 * k3 +
                   393.0 / 640.0 * k4 - 92097.0 / 339200.0 * k5 +
                   187.0 / 2100.0 * k6 + 1.0 / 40.0 * k7);
      const double err = (y5 - y4).cwiseAbs().maxCoeff();
      if (!y5.allFinite())
        throw IntegrationError("solution diverged during integration", t);
      if (err <= tol) {
        y = y5;
        t += h;
      }
      const double shrink =
          err > 0.0 ? 0.9 * std::pow(tol / err, 0.2) : 2.0;
      h *= std::min(4.0, std::max(0.2, shrink));
    }
    out.row(i) = y;
  }
  return out;
}

namespace detail {

// Extended-state layout: [x (p); Z columns (p per direction, q+p
// directions, theta first); W upper triangles (ut per output)].
struct ExtendedLayout {
  int p, q, nd, ut;
  bool second_order;

  ExtendedLayout(const OdeModel& model, bool second)
      : p(model.p), q(model.q), nd(model.q + model.p),
        ut((model.q + model.p) * (model.q + model.p + 1) / 2),
        second_order(second) {}

  int dim() const { return p + p * nd + (second_order ? p * ut : 0); }
  int z_off(int dir) const { return p + dir * p; }
  int w_off(int j) const { return p + p * nd + j * ut; }
  static int tri(int a, int b) {  // a <= b index into the upper triangle
    return b * (b + 1) / 2 + a;
  }
};

}  // namespace detail

/// Integrate the coupled first-order (and optionally second-order)
/// sensitivity system jointly with the states.
inline SensitivityBundle solve_sensitivities(const OdeModel& model,
                                             const Vector& x0,
                                             const Vector& theta,
                                             const std::vector<double>& grid,
                                             bool second_order,
                                             const SolveOptions& opts = {}) {
  check_point(model, x0, theta);
  detail::check_grid(grid);
  const detail::ExtendedLayout lay(model, second_order);
  const int p = lay.p, q = lay.q, nd = lay.nd, ut = lay.ut;

  auto rhs = [&](const Vector& y, double t) {
    const Vector x = y.head(p);
    const Vector f = model.rhs(x, t, theta);
    auto [jx, jt] = model.jacobians(x, t, theta);
    Vector dy(y.size());
    dy.head(p) = f;

    // Z columns: Zdot_a = (df/dtheta_a if a < q) + Jx * Z_a.
    Matrix Z(p, nd);
    for (int a = 0; a < nd; ++a) Z.col(a) = y.segment(lay.z_off(a), p);
    Matrix Zdot = jx * Z;
    Zdot.leftCols(q) += jt;
    for (int a = 0; a < nd; ++a) dy.segment(lay.z_off(a), p) = Zdot.col(a);

    if (second_order) {
      const auto Hf = model.hessians(x, t, theta);
      // Tangents in (x, theta) space, one column per direction.
      Matrix T = Matrix::Zero(p + q, nd);
      T.topRows(p) = Z;
      T.bottomLeftCorner(q, q).setIdentity();
      std::vector<Matrix> S(p);
      for (int j = 0; j < p; ++j) S[j] = T.transpose() * Hf[j] * T;

      for (int j = 0; j < p; ++j) {
        const int off = lay.w_off(j);
        for (int b = 0; b < nd; ++b)
          for (int a = 0; a <= b; ++a) {
            double v = S[j](a, b);
            for (int l = 0; l < p; ++l)
              v += jx(j, l) *
                   y[lay.w_off(l) + detail::ExtendedLayout::tri(a, b)];
            dy[off + detail::ExtendedLayout::tri(a, b)] = v;
          }
      }
    }
    return dy;
  };

  Vector y0 = Vector::Zero(lay.dim());
  y0.head(p) = x0;
  for (int l = 0; l < p; ++l) y0[lay.z_off(q + l) + l] = 1.0;  // dx/dx0 = I

  const Matrix sol = detail::integrate_refined(rhs, y0, grid, opts);

  SensitivityBundle bundle;
  bundle.times = grid;
  const int n = static_cast<int>(grid.size());
  bundle.states.resize(n, p);
  bundle.jac_theta.resize(n);
  bundle.jac_x0.resize(n);
  if (second_order) bundle.hess.resize(n);
  for (int i = 0; i < n; ++i) {
    bundle.states.row(i) = sol.row(i).head(p);
    Matrix jt(p, q), jx0(p, p);
    for (int a = 0; a < q; ++a) jt.col(a) = sol.row(i).segment(lay.z_off(a), p);
    for (int l = 0; l < p; ++l)
      jx0.col(l) = sol.row(i).segment(lay.z_off(q + l), p);
    bundle.jac_theta[i] = jt;
    bundle.jac_x0[i] = jx0;
    if (second_order) {
      bundle.hess[i].resize(p);
      for (int j = 0; j < p; ++j) {
        Matrix W(nd, nd);
        for (int b = 0; b < nd; ++b)
          for (int a = 0; a <= b; ++a) {
            const double v =
                sol(i, lay.w_off(j) + detail::ExtendedLayout::tri(a, b));
            W(a, b) = v;
            W(b, a) = v;
          }
        if (W.cwiseAbs().maxCoeff() > opts.magnitude_cap)
          bundle.conditioning_warning = true;
        bundle.hess[i][j] = W;
      }
    }
  }
  return bundle;
}

inline SensitivityBundle solve_first_order(const OdeModel& model,
                                           const Vector& x0,
                                           const Vector& theta,
                                           const std::vector<double>& grid,
                                           const SolveOptions& opts = {}) {
  return solve_sensitivities(model, x0, theta, grid, false, opts);
}

inline SensitivityBundle solve_second_order(const OdeModel& model,
                                            const Vector& x0,
                                            const Vector& theta,
                                            const std::vector<double>& grid,
                                            const SolveOptions& opts = {}) {
  return solve_sensitivities(model, x0, theta, grid, true, opts);
}

/// Scalar count of the extended second-order system, p + p(p+q) + p*ut.
inline int extended_system_dimension(int p, int q) {
  const int nd = p + q;
  return p + p * nd + p * nd * (nd + 1) / 2;
}

}  // namespace odelap
