#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "odelap/common.hpp"
#include "odelap/flow.hpp"
#include "odelap/model.hpp"
#include "odelap/sensitivity.hpp"

namespace odelap {

/// Gamma prior on the noise precision, uniform boxes on theta and x0.
struct Prior {
  double A0 = 1.0;
  double B0 = 1e-3;
  std::vector<std::pair<double, double>> theta_bounds;
  std::vector<std::pair<double, double>> x0_bounds;

  void validate() const {
    require(A0 > 0.0 && B0 > 0.0, "gamma prior needs A0 > 0 and B0 > 0");
    for (const auto& [a, b] : theta_bounds)
      require(a < b, "theta bound interval is empty");
    for (const auto& [a, b] : x0_bounds)
      require(a < b, "x0 bound interval is empty");
  }
};

struct Dataset {
  std::vector<double> times;  // t0..tn, strictly increasing
  Matrix Y;                   // (n+1) x p

  int n_intervals() const { return static_cast<int>(times.size()) - 1; }

  void validate() const {
    require(times.size() >= 2, "dataset needs at least two time points");
    require(static_cast<int>(times.size()) == Y.rows(),
            "dataset time/observation count mismatch");
    require(Y.allFinite(), "dataset contains non-finite observations");
    for (size_t i = 1; i < times.size(); ++i)
      require(times[i] > times[i - 1],
              "dataset times must be strictly increasing");
  }
};

struct RelaxedParams {
  double lambda = 1.0;
  Vector theta;
  Matrix X;  // (n+1) x p latent states
};

struct OriginalParams {
  double lambda = 1.0;
  Vector theta;
  Vector x0;
};

namespace detail {

inline void check_support(double lambda, const Vector& theta, const Vector& x0,
                          const Prior& prior) {
  if (lambda <= 0.0) throw DomainError("lambda must be positive");
  for (size_t k = 0; k < prior.theta_bounds.size(); ++k)
    if (theta[k] < prior.theta_bounds[k].first ||
        theta[k] > prior.theta_bounds[k].second)
      throw DomainError("theta[" + std::to_string(k) +
                        "] outside the uniform prior support");
  for (size_t j = 0; j < prior.x0_bounds.size(); ++j)
    if (x0[j] < prior.x0_bounds[j].first || x0[j] > prior.x0_bounds[j].second)
      throw DomainError("x0[" + std::to_string(j) +
                        "] outside the uniform prior support");
}

inline double log_lambda_coefficient(int p, int n, const Prior& prior) {
  return 0.5 * p * (n + 1) + prior.A0 - 1.0;
}

// Flow map with derivatives for every interval, evaluated at the given X.
inline std::vector<FlowDerivatives> interval_flows(const OdeModel& model,
                                                   const Matrix& X,
                                                   const Dataset& data, int m,
                                                   const Vector& theta,
                                                   bool with_hessians) {
  const int n = data.n_intervals();
  std::vector<FlowDerivatives> flows;
  flows.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double h = data.times[i + 1] - data.times[i];
    flows.push_back(compose_flow(model, X.row(i).transpose(), data.times[i],
                                 theta, StepConfig(h, m), with_hessians));
  }
  return flows;
}

}  // namespace detail

/// Parameter ordering used in every vector/matrix over the relaxed model:
/// (lambda, theta_1..theta_q, x_0, x_1, ..., x_n), states row-major.
inline int relaxed_dim(const OdeModel& model, const Dataset& data) {
  return 1 + model.q + static_cast<int>(data.times.size()) * model.p;
}

inline double relaxed_nll(const OdeModel& model, const RelaxedParams& params,
                          const Dataset& data, double tau, const Prior& prior,
                          int m) {
  data.validate();
  require(tau > 0.0, "tau must be positive");
  require(params.X.rows() == data.Y.rows() && params.X.cols() == model.p,
          "latent state matrix has wrong shape");
  detail::check_support(params.lambda, params.theta,
                        params.X.row(0).transpose(), prior);
  const int n = data.n_intervals();
  const double a = detail::log_lambda_coefficient(model.p, n, prior);

  double transition = 0.0;
  for (int i = 0; i < n; ++i) {
    const double h = data.times[i + 1] - data.times[i];
    const Vector g = compose_flow(model, params.X.row(i).transpose(),
                                  data.times[i], params.theta,
                                  StepConfig(h, m), false)
                         .value;
    transition += (params.X.row(i + 1).transpose() - g).squaredNorm();
  }
  const double fit = (data.Y - params.X).squaredNorm();
  return -a * std::log(params.lambda) + prior.B0 * params.lambda +
         transition / (2.0 * tau) + 0.5 * params.lambda * fit;
}

inline Vector relaxed_gradient(const OdeModel& model,
                               const RelaxedParams& params,
                               const Dataset& data, double tau,
                               const Prior& prior, int m) {
  data.validate();
  detail::check_support(params.lambda, params.theta,
                        params.X.row(0).transpose(), prior);
  const int p = model.p, q = model.q, n = data.n_intervals();
  const double a = detail::log_lambda_coefficient(p, n, prior);
  const auto flows =
      detail::interval_flows(model, params.X, data, m, params.theta, false);

  Vector grad = Vector::Zero(relaxed_dim(model, data));
  auto x_off = [&](int i) { return 1 + q + i * p; };

  grad[0] = -a / params.lambda + prior.B0 +
            0.5 * (data.Y - params.X).squaredNorm();
  for (int i = 0; i <= n; ++i)
    grad.segment(x_off(i), p) =
        params.lambda * (params.X.row(i) - data.Y.row(i)).transpose();

  for (int i = 0; i < n; ++i) {
    const Vector r =
        params.X.row(i + 1).transpose() - flows[i].value;  // residual r_{i+1}
    grad.segment(1, q) -= flows[i].jac_theta.transpose() * r / tau;
    grad.segment(x_off(i), p) -= flows[i].jac_x.transpose() * r / tau;
    grad.segment(x_off(i + 1), p) += r / tau;
  }
  return grad;
}

/// Full relaxed-model Hessian over (lambda, theta, x_0..x_n).
inline Matrix relaxed_hessian(const OdeModel& model,
                              const RelaxedParams& params, const Dataset& data,
                              double tau, const Prior& prior, int m) {
  data.validate();
  detail::check_support(params.lambda, params.theta,
                        params.X.row(0).transpose(), prior);
  const int p = model.p, q = model.q, n = data.n_intervals();
  const double a = detail::log_lambda_coefficient(p, n, prior);
  const auto flows =
      detail::interval_flows(model, params.X, data, m, params.theta, true);

  const int dim = relaxed_dim(model, data);
  Matrix H = Matrix::Zero(dim, dim);
  auto x_off = [&](int i) { return 1 + q + i * p; };

  H(0, 0) = a / (params.lambda * params.lambda);
  for (int i = 0; i <= n; ++i) {
    const Vector dx = (params.X.row(i) - data.Y.row(i)).transpose();
    H.block(x_off(i), 0, p, 1) = dx;
    H.block(0, x_off(i), 1, p) = dx.transpose();
    H.block(x_off(i), x_off(i), p, p) =
        params.lambda * Matrix::Identity(p, p);
    if (i >= 1)
      H.block(x_off(i), x_off(i), p, p) += Matrix::Identity(p, p) / tau;
  }

  for (int i = 0; i < n; ++i) {
    const auto& fl = flows[i];
    const Vector r = params.X.row(i + 1).transpose() - fl.value;

    // Residual-weighted curvature of g at x_i, split into u-blocks.
    Matrix rH = Matrix::Zero(p + q, p + q);
    for (int j = 0; j < p; ++j) rH += r[j] * fl.hessians[j];
    const Matrix rH_xx = rH.topLeftCorner(p, p);
    const Matrix rH_xt = rH.topRightCorner(p, q);
    const Matrix rH_tt = rH.bottomRightCorner(q, q);

    H.block(1, 1, q, q) +=
        (fl.jac_theta.transpose() * fl.jac_theta - rH_tt) / tau;
    H.block(x_off(i), 1, p, q) +=
        (fl.jac_x.transpose() * fl.jac_theta - rH_xt) / tau;
    H.block(x_off(i + 1), 1, p, q) -= fl.jac_theta / tau;
    H.block(x_off(i), x_off(i), p, p) +=
        (fl.jac_x.transpose() * fl.jac_x - rH_xx) / tau;
    H.block(x_off(i + 1), x_off(i), p, p) -= fl.jac_x / tau;
  }

  // Mirror the lower triangle into the upper one.
  H.triangularView<Eigen::StrictlyUpper>() =
      H.transpose().triangularView<Eigen::StrictlyUpper>();
  return H;
}

inline double original_nll(const OdeModel& model, const OriginalParams& params,
                           const Dataset& data, const Prior& prior,
                           const SolveOptions& solve_opts = {}) {
  data.validate();
  detail::check_support(params.lambda, params.theta, params.x0, prior);
  const int n = data.n_intervals();
  const double a = detail::log_lambda_coefficient(model.p, n, prior);
  const Matrix traj =
      solve_reference(model, params.x0, params.theta, data.times, solve_opts);
  const double fit = (data.Y - traj).squaredNorm();
  return -a * std::log(params.lambda) + prior.B0 * params.lambda +
         0.5 * params.lambda * fit;
}

struct OriginalHessianResult {
  Matrix H;  // over (lambda, theta, x0)
  bool conditioning_warning = false;
};

/// Original-model Hessian assembled from second-order sensitivities.
inline OriginalHessianResult original_hessian(
    const OdeModel& model, const OriginalParams& params, const Dataset& data,
    const Prior& prior, const SolveOptions& solve_opts = {}) {
  data.validate();
  detail::check_support(params.lambda, params.theta, params.x0, prior);
  const int p = model.p, q = model.q, n = data.n_intervals();
  const double a = detail::log_lambda_coefficient(p, n, prior);
  const SensitivityBundle bundle = solve_second_order(
      model, params.x0, params.theta, data.times, solve_opts);

  const int dim = 1 + q + p;
  Matrix H = Matrix::Zero(dim, dim);
  H(0, 0) = a / (params.lambda * params.lambda);
  H.block(1 + q, 0, p, 1) = params.x0 - data.Y.row(0).transpose();

  Matrix Htt = Matrix::Zero(q, q);
  Matrix Hxt = Matrix::Zero(p, q);
  Matrix Hxx = Matrix::Identity(p, p);  // lambda * I term, scaled below

  for (int i = 1; i <= n; ++i) {
    const Vector res = data.Y.row(i).transpose() - bundle.states.row(i).transpose();
    const Matrix& Jt = bundle.jac_theta[i];
    const Matrix& Jx0 = bundle.jac_x0[i];
    H.block(1, 0, q, 1) -= Jt.transpose() * res;
    H.block(1 + q, 0, p, 1) -= Jx0.transpose() * res;

    Matrix rW = Matrix::Zero(q + p, q + p);  // (theta, x0) ordering
    for (int j = 0; j < p; ++j) rW += res[j] * bundle.hess[i][j];
    Htt += Jt.transpose() * Jt - rW.topLeftCorner(q, q);
    Hxt += Jx0.transpose() * Jt - rW.bottomLeftCorner(p, q);
    Hxx += Jx0.transpose() * Jx0 - rW.bottomRightCorner(p, p);
  }
  H.block(1, 1, q, q) = params.lambda * Htt;
  H.block(1 + q, 1, p, q) = params.lambda * Hxt;
  H.block(1 + q, 1 + q, p, p) = params.lambda * Hxx;

  H.triangularView<Eigen::StrictlyUpper>() =
      H.transpose().triangularView<Eigen::StrictlyUpper>();
  return {H, bundle.conditioning_warning};
}

}  // namespace odelap
