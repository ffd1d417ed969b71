#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "odelap/common.hpp"
#include "odelap/spline.hpp"

namespace odelap {

/// ODE right-hand side f(x, t; theta) with hand-coded derivatives.
///
/// Hessians are taken w.r.t. the joined vector u = (x, theta), one
/// symmetric (p+q)x(p+q) matrix per output component.
struct OdeModel {
  std::string name;
  int p = 0;  // state dimension
  int q = 0;  // parameter dimension

  std::function<Vector(const Vector& x, double t, const Vector& theta)> rhs;
  std::function<std::pair<Matrix, Matrix>(const Vector& x, double t,
                                          const Vector& theta)>
      jacobians;  // (p x p, p x q)
  std::function<std::vector<Matrix>(const Vector& x, double t,
                                    const Vector& theta)>
      hessians;
};

inline void check_point(const OdeModel& model, const Vector& x,
                        const Vector& theta) {
  require(x.size() == model.p, model.name + ": state dimension mismatch");
  require(theta.size() == model.q,
          model.name + ": parameter dimension mismatch");
}

inline Vector eval_rhs(const OdeModel& model, const Vector& x, double t,
                       const Vector& theta) {
  check_point(model, x, theta);
  return model.rhs(x, t, theta);
}

inline std::pair<Matrix, Matrix> eval_jacobians(const OdeModel& model,
                                                const Vector& x, double t,
                                                const Vector& theta) {
  check_point(model, x, theta);
  return model.jacobians(x, t, theta);
}

inline std::vector<Matrix> eval_hessians(const OdeModel& model,
                                         const Vector& x, double t,
                                         const Vector& theta) {
  check_point(model, x, theta);
  return model.hessians(x, t, theta);
}

// Symmetric accumulation helper for hand-coded Hessians.
inline void sym_add(Matrix& H, int a, int b, double v) {
  H(a, b) += v;
  if (a != b) H(b, a) += v;
}

/// Scalar linear model xdot = theta1 * x (closed-form validation model).
inline OdeModel linear_test_model() {
  OdeModel model;
  model.name = "linear-test";
  model.p = 1;
  model.q = 1;
  model.rhs = [](const Vector& x, double, const Vector& theta) {
    Vector f(1);
    f[0] = theta[0] * x[0];
    return f;
  };
  model.jacobians = [](const Vector& x, double, const Vector& theta) {
    Matrix jx(1, 1), jt(1, 1);
    jx(0, 0) = theta[0];
    jt(0, 0) = x[0];
    return std::make_pair(jx, jt);
  };
  model.hessians = [](const Vector&, double, const Vector&) {
    Matrix H = Matrix::Zero(2, 2);
    sym_add(H, 0, 1, 1.0);
    return std::vector<Matrix>{H};
  };
  return model;
}

/// FitzHugh-Nagumo: x1' = th3 (x1 - x1^3/3 + x2), x2' = -(x1 - th1 + th2 x2)/th3.
inline OdeModel fitzhugh_nagumo_model() {
  OdeModel model;
  model.name = "fitzhugh-nagumo";
  model.p = 2;
  model.q = 3;
  model.rhs = [](const Vector& x, double, const Vector& th) {
    Vector f(2);
    f[0] = th[2] * (x[0] - x[0] * x[0] * x[0] / 3.0 + x[1]);
    f[1] = -(x[0] - th[0] + th[1] * x[1]) / th[2];
    return f;
  };
  model.jacobians = [](const Vector& x, double, const Vector& th) {
    Matrix jx = Matrix::Zero(2, 2), jt = Matrix::Zero(2, 3);
    jx(0, 0) = th[2] * (1.0 - x[0] * x[0]);
    jx(0, 1) = th[2];
    jx(1, 0) = -1.0 / th[2];
    jx(1, 1) = -th[1] / th[2];
    jt(0, 2) = x[0] - x[0] * x[0] * x[0] / 3.0 + x[1];
    jt(1, 0) = 1.0 / th[2];
    jt(1, 1) = -x[1] / th[2];
    jt(1, 2) = (x[0] - th[0] + th[1] * x[1]) / (th[2] * th[2]);
    return std::make_pair(jx, jt);
  };
  model.hessians = [](const Vector& x, double, const Vector& th) {
    // u = (x1, x2, th1, th2, th3)
    std::vector<Matrix> H(2, Matrix::Zero(5, 5));
    sym_add(H[0], 0, 0, -2.0 * th[2] * x[0]);
    sym_add(H[0], 0, 4, 1.0 - x[0] * x[0]);
    sym_add(H[0], 1, 4, 1.0);
    const double t3sq = th[2] * th[2];
    sym_add(H[1], 0, 4, 1.0 / t3sq);
    sym_add(H[1], 1, 3, -1.0 / th[2]);
    sym_add(H[1], 1, 4, th[1] / t3sq);
    sym_add(H[1], 2, 4, -1.0 / t3sq);
    sym_add(H[1], 3, 4, x[1] / t3sq);
    sym_add(H[1], 4, 4, -2.0 * (x[0] - th[0] + th[1] * x[1]) / (t3sq * th[2]));
    return H;
  };
  return model;
}

/// Lorenz-96 with per-index parameter triples:
///   Xj' = th1j (X_{j+1} - X_{j-2}) X_{j-1} - th2j Xj + th3j,
/// cyclic state indexing, theta laid out as (th1j, th2j, th3j) per j.
inline OdeModel lorenz96_model(int p) {
  require(p >= 3, "lorenz96 needs at least 3 state variables");
  OdeModel model;
  model.name = "lorenz96";
  model.p = p;
  model.q = 3 * p;
  auto wrap = [p](int j) { return ((j % p) + p) % p; };
  model.rhs = [p, wrap](const Vector& x, double, const Vector& th) {
    Vector f(p);
    for (int j = 0; j < p; ++j) {
      f[j] = th[3 * j] * (x[wrap(j + 1)] - x[wrap(j - 2)]) * x[wrap(j - 1)] -
             th[3 * j + 1] * x[j] + th[3 * j + 2];
    }
    return f;
  };
  model.jacobians = [p, wrap](const Vector& x, double, const Vector& th) {
    Matrix jx = Matrix::Zero(p, p), jt = Matrix::Zero(p, 3 * p);
    for (int j = 0; j < p; ++j) {
      const int jp = wrap(j + 1), jmm = wrap(j - 2), jm = wrap(j - 1);
      jx(j, jp) += th[3 * j] * x[jm];
      jx(j, jmm) -= th[3 * j] * x[jm];
      jx(j, jm) += th[3 * j] * (x[jp] - x[jmm]);
      jx(j, j) -= th[3 * j + 1];
      jt(j, 3 * j) = (x[jp] - x[jmm]) * x[jm];
      jt(j, 3 * j + 1) = -x[j];
      jt(j, 3 * j + 2) = 1.0;
    }
    return std::make_pair(jx, jt);
  };
  model.hessians = [p, wrap](const Vector& x, double, const Vector& th) {
    const int d = p + 3 * p;
    std::vector<Matrix> H(p, Matrix::Zero(d, d));
    for (int j = 0; j < p; ++j) {
      const int jp = wrap(j + 1), jmm = wrap(j - 2), jm = wrap(j - 1);
      const int a = p + 3 * j;  // th1j column in u = (x, theta)
      // Trilinear term th1j * X_{j+1} * X_{j-1}, monomial by monomial.
      sym_add(H[j], jp, jm, th[3 * j]);
      sym_add(H[j], a, jp, x[jm]);
      sym_add(H[j], a, jm, x[jp]);
      // Minus th1j * X_{j-2} * X_{j-1}.
      sym_add(H[j], jmm, jm, -th[3 * j]);
      sym_add(H[j], a, jmm, -x[jm]);
      sym_add(H[j], a, jm, -x[jmm]);
      // Minus th2j * Xj.
      sym_add(H[j], p + 3 * j + 1, j, -1.0);
    }
    return H;
  };
  return model;
}

/// Time-varying SIR with exponential-of-spline transmission and removal rates:
///   I' = beta(t) I (N - I - R)/N - gamma(t) I,   R' = gamma(t) I,
/// parameters are the basis coefficients (c_beta, c_gamma).
inline OdeModel make_sir_model(const SplineBasis& basis_beta,
                               const SplineBasis& basis_gamma, double N) {
  require(N > 0.0, "sir-tv: population must be positive");
  require(basis_beta.t_min() == basis_gamma.t_min() &&
              basis_beta.t_max() == basis_gamma.t_max(),
          "sir-tv: beta and gamma bases must share the observation window");
  OdeModel model;
  model.name = "sir-tv";
  model.p = 2;
  const int nb = basis_beta.n_basis, ng = basis_gamma.n_basis;
  model.q = nb + ng;

  auto rates = [basis_beta, basis_gamma, nb, ng](double t, const Vector& c) {
    const Vector Bb = eval_spline_basis(basis_beta, t);
    const Vector Bg = eval_spline_basis(basis_gamma, t);
    const double beta = std::exp(Bb.dot(c.head(nb)));
    const double gamma = std::exp(Bg.dot(c.tail(ng)));
    return std::make_tuple(beta, gamma, Bb, Bg);
  };

  model.rhs = [rates, N](const Vector& x, double t, const Vector& c) {
    auto [beta, gamma, Bb, Bg] = rates(t, c);
    const double I = x[0], R = x[1];
    Vector f(2);
    f[0] = beta * I * (N - I - R) / N - gamma * I;
    f[1] = gamma * I;
    return f;
  };
  model.jacobians = [rates, N, nb, ng](const Vector& x, double t,
                                       const Vector& c) {
    auto [beta, gamma, Bb, Bg] = rates(t, c);
    const double I = x[0], R = x[1];
    const double S = (N - I - R) / N;
    Matrix jx = Matrix::Zero(2, 2), jt = Matrix::Zero(2, nb + ng);
    jx(0, 0) = beta * (N - 2.0 * I - R) / N - gamma;
    jx(0, 1) = -beta * I / N;
    jx(1, 0) = gamma;
    for (int i = 0; i < nb; ++i) jt(0, i) = Bb[i] * beta * I * S;
    for (int i = 0; i < ng; ++i) {
      jt(0, nb + i) = -Bg[i] * gamma * I;
      jt(1, nb + i) = Bg[i] * gamma * I;
    }
    return std::make_pair(jx, jt);
  };
  model.hessians = [rates, N, nb, ng](const Vector& x, double t,
                                      const Vector& c) {
    auto [beta, gamma, Bb, Bg] = rates(t, c);
    const double I = x[0], R = x[1];
    const double S = (N - I - R) / N;
    const double dSdI = (N - 2.0 * I - R) / N;  // d(I*S)/dI
    const int d = 2 + nb + ng;
    std::vector<Matrix> H(2, Matrix::Zero(d, d));
    // f1 = beta * I * S - gamma * I, with u = (I, R, c_beta, c_gamma).
    sym_add(H[0], 0, 0, -2.0 * beta / N);
    sym_add(H[0], 0, 1, -beta / N);
    for (int i = 0; i < nb; ++i) {
      const int a = 2 + i;
      sym_add(H[0], 0, a, Bb[i] * beta * dSdI);
      sym_add(H[0], 1, a, -Bb[i] * beta * I / N);
      for (int k = i; k < nb; ++k)
        sym_add(H[0], a, 2 + k, Bb[i] * Bb[k] * beta * I * S);
    }
    for (int i = 0; i < ng; ++i) {
      const int a = 2 + nb + i;
      sym_add(H[0], 0, a, -Bg[i] * gamma);
      sym_add(H[1], 0, a, Bg[i] * gamma);
      for (int k = i; k < ng; ++k) {
        sym_add(H[0], a, 2 + nb + k, -Bg[i] * Bg[k] * gamma * I);
        sym_add(H[1], a, 2 + nb + k, Bg[i] * Bg[k] * gamma * I);
      }
    }
    return H;
  };
  return model;
}

/// Build a registered model from its name and JSON config block.
inline OdeModel make_model(const std::string& name,
                           const nlohmann::json& config = {}) {
  if (name == "linear-test") return linear_test_model();
  if (name == "fitzhugh-nagumo") return fitzhugh_nagumo_model();
  if (name == "lorenz96") {
    const int p = config.value("p", 4);
    return lorenz96_model(p);
  }
  if (name == "sir-tv") {
    require(config.contains("N") && config.contains("window"),
            "sir-tv config needs N and window");
    const double a = config["window"][0], b = config["window"][1];
    const int nb = config.value("n_basis_beta", 30);
    const int ng = config.value("n_basis_gamma", 30);
    return make_sir_model(make_uniform_clamped_basis(a, b, nb),
                          make_uniform_clamped_basis(a, b, ng),
                          config["N"].get<double>());
  }
  throw InputError("unknown model name: " + name);
}

}  // namespace odelap
