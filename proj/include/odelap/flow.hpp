#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "odelap/common.hpp"
#include "odelap/model.hpp"

namespace odelap {

/// Value and u = (x, theta) derivatives of the one-interval transition map.
struct FlowDerivatives {
  Vector value;                 // p
  Matrix jac_x;                 // p x p
  Matrix jac_theta;             // p x q
  std::vector<Matrix> hessians; // p symmetric (p+q) x (p+q)
};

struct StepConfig {
  double h = 0.0;  // observation-interval length
  int m = 1;       // uniform subdivision count

  StepConfig(double h, int m) : h(h), m(m) {
    require(h > 0.0, "step length must be positive");
    require(m >= 1, "subdivision count must be >= 1");
  }
};

namespace detail {

inline void check_stage_finite(const Vector& k, int stage, double t) {
  if (!k.allFinite())
    throw IntegrationError(
        "non-finite value in RK4 stage K" + std::to_string(stage), t);
}

// One RK4 stage evaluation; shared by all flow entry points.
struct Rk4Stages {
  Vector k1, k2, k3, k4;
  Vector x2, x3, x4;  // stage states
};

inline Rk4Stages rk4_stages(const OdeModel& model, const Vector& x, double t,
                            const Vector& theta, double h) {
  Rk4Stages s;
  s.k1 = h * model.rhs(x, t, theta);
  check_stage_finite(s.k1, 1, t);
  s.x2 = x + 0.5 * s.k1;
  s.k2 = h * model.rhs(s.x2, t + 0.5 * h, theta);
  check_stage_finite(s.k2, 2, t);
  s.x3 = x + 0.5 * s.k2;
  s.k3 = h * model.rhs(s.x3, t + 0.5 * h, theta);
  check_stage_finite(s.k3, 3, t);
  s.x4 = x + s.k3;
  s.k4 = h * model.rhs(s.x4, t + h, theta);
  check_stage_finite(s.k4, 4, t);
  return s;
}

}  // namespace detail

/// Single RK4 step: x + (K1 + 2 K2 + 2 K3 + K4) / 6.
inline Vector rk4_step(const OdeModel& model, const Vector& x, double t,
                       const Vector& theta, double h) {
  check_point(model, x, theta);
  require(h > 0.0, "step length must be positive");
  const auto s = detail::rk4_stages(model, x, t, theta, h);
  return x + (s.k1 + 2.0 * s.k2 + 2.0 * s.k3 + s.k4) / 6.0;
}

namespace detail {

// Forward chain rule through the four stages.  Optionally also the
// stage-recursive Hessians (Appendix-style v-vector sandwich terms).
inline FlowDerivatives rk4_derivatives(const OdeModel& model, const Vector& x,
                                       double t, const Vector& theta, double h,
                                       bool with_hessians) {
  const int p = model.p, q = model.q, d = p + q;
  const auto s = rk4_stages(model, x, t, theta, h);

  // Stage Jacobians w.r.t. u, as p x (p+q) blocks [J_x | J_theta].
  auto f_jac_u = [&](const Vector& xs, double ts) {
    auto [jx, jt] = model.jacobians(xs, ts, theta);
    Matrix J(p, d);
    J << jx, jt;
    return J;
  };

  const Matrix Jf1 = f_jac_u(x, t);
  Matrix JK1 = h * Jf1;

  // Stage s >= 2: v = (x + c*K_prev, theta), J_Ks = h * J_f(v) * J_v.
  auto stage_jac = [&](const Matrix& JKprev, const Vector& xs, double ts,
                       double c, Matrix* Jf_out) {
    Matrix Jf = f_jac_u(xs, ts);
    Matrix Jv = Matrix::Zero(d, d);
    Jv.topRows(p) << Matrix::Identity(p, p), Matrix::Zero(p, q);
    Jv.topRows(p) += c * JKprev;
    Jv.bottomRightCorner(q, q).setIdentity();
    if (Jf_out) *Jf_out = Jf;
    return std::make_pair(Matrix(h * Jf * Jv), Jv);
  };

  Matrix Jf2, Jf3, Jf4;
  auto [JK2, Jv2] = stage_jac(JK1, s.x2, t + 0.5 * h, 0.5, &Jf2);
  auto [JK3, Jv3] = stage_jac(JK2, s.x3, t + 0.5 * h, 0.5, &Jf3);
  auto [JK4, Jv4] = stage_jac(JK3, s.x4, t + h, 1.0, &Jf4);

  FlowDerivatives out;
  out.value = x + (s.k1 + 2.0 * s.k2 + 2.0 * s.k3 + s.k4) / 6.0;
  Matrix Jg(p, d);
  Jg << Matrix::Identity(p, p), Matrix::Zero(p, q);
  Jg += (JK1 + 2.0 * JK2 + 2.0 * JK3 + JK4) / 6.0;
  out.jac_x = Jg.leftCols(p);
  out.jac_theta = Jg.rightCols(q);

  if (!with_hessians) return out;

  const auto Hf1 = model.hessians(x, t, theta);
  const auto Hf2 = model.hessians(s.x2, t + 0.5 * h, theta);
  const auto Hf3 = model.hessians(s.x3, t + 0.5 * h, theta);
  const auto Hf4 = model.hessians(s.x4, t + h, theta);

  std::vector<Matrix> HK1(p), HK2(p), HK3(p), HK4(p);
  for (int j = 0; j < p; ++j) HK1[j] = h * Hf1[j];

  // H_Ks[j] = c*h * sum_k Jf_x(v)_{jk} H_Kprev[k] + h * Jv^T H_fj(v) Jv.
  auto stage_hess = [&](const std::vector<Matrix>& HKprev, const Matrix& Jf,
                        const std::vector<Matrix>& Hf, const Matrix& Jv,
                        double c, std::vector<Matrix>& HK) {
    for (int j = 0; j < p; ++j) {
      Matrix acc = Matrix::Zero(d, d);
      for (int k = 0; k < p; ++k) acc += Jf(j, k) * HKprev[k];
      HK[j] = c * h * acc + h * Jv.transpose() * Hf[j] * Jv;
    }
  };
  stage_hess(HK1, Jf2, Hf2, Jv2, 0.5, HK2);
  stage_hess(HK2, Jf3, Hf3, Jv3, 0.5, HK3);
  stage_hess(HK3, Jf4, Hf4, Jv4, 1.0, HK4);

  out.hessians.resize(p);
  for (int j = 0; j < p; ++j) {
    Matrix Hg = (HK1[j] + 2.0 * HK2[j] + 2.0 * HK3[j] + HK4[j]) / 6.0;
    out.hessians[j] = 0.5 * (Hg + Hg.transpose());
  }
  return out;
}

}  // namespace detail

inline std::pair<Matrix, Matrix> rk4_jacobian(const OdeModel& model,
                                              const Vector& x, double t,
                                              const Vector& theta, double h) {
  check_point(model, x, theta);
  require(h > 0.0, "step length must be positive");
  auto fd = detail::rk4_derivatives(model, x, t, theta, h, false);
  return {fd.jac_x, fd.jac_theta};
}

inline std::vector<Matrix> rk4_hessian(const OdeModel& model, const Vector& x,
                                       double t, const Vector& theta,
                                       double h) {
  check_point(model, x, theta);
  require(h > 0.0, "step length must be positive");
  return detail::rk4_derivatives(model, x, t, theta, h, true).hessians;
}

/// m-fold composition of the RK4 map with inner step h/m, with exact
/// first- and second-derivative propagation through the composition.
inline FlowDerivatives compose_flow(const OdeModel& model, const Vector& x,
                                    double t, const Vector& theta,
                                    const StepConfig& config,
                                    bool with_hessians = true) {
  check_point(model, x, theta);
  const int p = model.p, q = model.q, d = p + q;
  const double h_in = config.h / config.m;

  // Accumulated composition state: identity map at the start.
  FlowDerivatives acc;
  acc.value = x;
  acc.jac_x = Matrix::Identity(p, p);
  acc.jac_theta = Matrix::Zero(p, q);
  if (with_hessians) acc.hessians.assign(p, Matrix::Zero(d, d));

  for (int step = 0; step < config.m; ++step) {
    const double ts = t + step * h_in;
    const FlowDerivatives g =
        detail::rk4_derivatives(model, acc.value, ts, theta, h_in,
                                with_hessians);
    Matrix new_jx = g.jac_x * acc.jac_x;
    Matrix new_jt = g.jac_x * acc.jac_theta + g.jac_theta;

    if (with_hessians) {
      Matrix Jv(d, d);  // [acc.jac_x  acc.jac_theta; 0  I_q]
      Jv << acc.jac_x, acc.jac_theta, Matrix::Zero(q, p),
          Matrix::Identity(q, q);
      std::vector<Matrix> new_h(p);
      for (int j = 0; j < p; ++j) {
        Matrix H = Jv.transpose() * g.hessians[j] * Jv;
        for (int k = 0; k < p; ++k) H += g.jac_x(j, k) * acc.hessians[k];
        new_h[j] = 0.5 * (H + H.transpose());
      }
      acc.hessians = std::move(new_h);
    }
    acc.value = g.value;
    acc.jac_x = std::move(new_jx);
    acc.jac_theta = std::move(new_jt);
  }
  return acc;
}

}  // namespace odelap
