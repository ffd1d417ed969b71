#pragma once

#include <random>
#include <vector>

#include "odelap/model.hpp"
#include "odelap/spline.hpp"

namespace odelap::testing {

struct Point {
  Vector x;
  Vector theta;
  double t;
};

// Random admissible points per model, away from singular parameter values.
inline Point random_point(const OdeModel& model, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Point pt;
  pt.x.resize(model.p);
  pt.theta.resize(model.q);
  pt.t = 10.0 * u(rng);
  if (model.name == "linear-test") {
    pt.x[0] = -2.0 + 4.0 * u(rng);
    pt.theta[0] = -2.0 + 4.0 * u(rng);
  } else if (model.name == "fitzhugh-nagumo") {
    for (int j = 0; j < 2; ++j) pt.x[j] = -3.0 + 6.0 * u(rng);
    pt.theta[0] = 0.1 + 0.9 * u(rng);
    pt.theta[1] = 0.1 + 0.9 * u(rng);
    pt.theta[2] = 1.0 + 4.0 * u(rng);
  } else if (model.name == "lorenz96") {
    for (int j = 0; j < model.p; ++j) pt.x[j] = -5.0 + 10.0 * u(rng);
    for (int j = 0; j < model.p; ++j) {
      pt.theta[3 * j] = 0.5 + 1.5 * u(rng);
      pt.theta[3 * j + 1] = 0.5 + 1.5 * u(rng);
      pt.theta[3 * j + 2] = 4.0 + 6.0 * u(rng);
    }
  } else if (model.name == "sir-tv") {
    pt.x[0] = 1.0 + 99.0 * u(rng);
    pt.x[1] = 100.0 * u(rng);
    for (int k = 0; k < model.q; ++k) pt.theta[k] = -1.0 + 2.0 * u(rng);
  } else {
    for (int j = 0; j < model.p; ++j) pt.x[j] = -1.0 + 2.0 * u(rng);
    for (int k = 0; k < model.q; ++k) pt.theta[k] = -1.0 + 2.0 * u(rng);
  }
  return pt;
}

// Small SIR instance used throughout the test suite.
inline OdeModel small_sir_model() {
  return make_sir_model(make_uniform_clamped_basis(0.0, 10.0, 4),
                        make_uniform_clamped_basis(0.0, 10.0, 4), 1000.0);
}

inline std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) g[i] = a + (b - a) * i / (n - 1);
  return g;
}

// Random symmetric positive definite matrix A A^T + eps I.
inline Matrix random_spd(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix A(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) A(i, j) = normal(rng);
  return A * A.transpose() + 0.1 * Matrix::Identity(dim, dim);
}

}  // namespace odelap::testing
