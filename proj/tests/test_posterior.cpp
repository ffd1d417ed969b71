#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "odelap/fd.hpp"
#include "odelap/posterior.hpp"

using namespace odelap;
using odelap::testing::linspace;

namespace {

Prior wide_prior(int q, int p, double A0 = 1.0, double B0 = 1e-3) {
  Prior prior;
  prior.A0 = A0;
  prior.B0 = B0;
  prior.theta_bounds.assign(q, {-50.0, 50.0});
  prior.x0_bounds.assign(p, {-50.0, 50.0});
  return prior;
}

// States generated exactly on the g-recursion so transition residuals vanish.
Matrix recursion_states(const OdeModel& model, const Vector& x0,
                        const Vector& theta, const std::vector<double>& times,
                        int m) {
  Matrix X(times.size(), model.p);
  X.row(0) = x0.transpose();
  for (size_t i = 1; i < times.size(); ++i) {
    const double h = times[i] - times[i - 1];
    X.row(i) = compose_flow(model, X.row(i - 1).transpose(), times[i - 1],
                            theta, StepConfig(h, m), false)
                   .value.transpose();
  }
  return X;
}

// Flatten (lambda, theta, X) for finite differencing.
Vector pack_relaxed(const RelaxedParams& params) {
  const int q = params.theta.size(), rows = params.X.rows(),
            p = params.X.cols();
  Vector v(1 + q + rows * p);
  v[0] = params.lambda;
  v.segment(1, q) = params.theta;
  for (int i = 0; i < rows; ++i)
    v.segment(1 + q + i * p, p) = params.X.row(i).transpose();
  return v;
}

RelaxedParams unpack_relaxed(const Vector& v, int q, int rows, int p) {
  RelaxedParams params;
  params.lambda = v[0];
  params.theta = v.segment(1, q);
  params.X.resize(rows, p);
  for (int i = 0; i < rows; ++i)
    params.X.row(i) = v.segment(1 + q + i * p, p).transpose();
  return params;
}

}  // namespace

TEST_CASE("relaxed_nll on a perfect fit") {
  const auto lin = linear_test_model();
  const auto times = linspace(0.0, 1.0, 6);
  Vector x0(1), th(1);
  x0 << 2.0;
  th << -0.5;
  const int m = 2;
  const Matrix X = recursion_states(lin, x0, th, times, m);

  Dataset data;
  data.times = times;
  data.Y = X;
  RelaxedParams params{1.0, th, X};

  SUBCASE("both quadratic sums vanish") {
    const auto prior = wide_prior(1, 1, 1.0, 1.0);
    // a = p(n+1)/2 + A0 - 1 = 3; lambda = 1 -> nll = B0 * lambda = 1
    CHECK(relaxed_nll(lin, params, data, 1e-4, prior, m) ==
          doctest::Approx(1.0).epsilon(1e-14));
    params.lambda = 2.0;
    CHECK(relaxed_nll(lin, params, data, 1e-4, prior, m) ==
          doctest::Approx(-3.0 * std::log(2.0) + 2.0).epsilon(1e-12));
  }

  SUBCASE("doubling tau halves the transition term") {
    const auto prior = wide_prior(1, 1);
    RelaxedParams off = params;
    off.X(3, 0) += 0.5;  // nonzero state residual
    Dataset d2 = data;
    const double tau = 1e-3;
    const double l1 = relaxed_nll(lin, off, d2, tau, prior, m);
    const double l2 = relaxed_nll(lin, off, d2, 2.0 * tau, prior, m);
    // difference is S_g/(4 tau); recover S_g from the two evaluations
    const double S_g = 4.0 * tau * (l1 - l2);
    CHECK(S_g > 0.0);
    const double l4 = relaxed_nll(lin, off, d2, 4.0 * tau, prior, m);
    CHECK(l2 - l4 == doctest::Approx(S_g / (8.0 * tau)).epsilon(1e-9));
  }
}

TEST_CASE("relaxed_gradient") {
  const auto lin = linear_test_model();
  const auto times = linspace(0.0, 1.0, 6);
  Vector x0(1), th(1);
  x0 << 1.5;
  th << -0.8;
  const int m = 1;
  const auto prior = wide_prior(1, 1);
  const Matrix X = recursion_states(lin, x0, th, times, m);

  SUBCASE("zero at the perfect fit with lambda at its conditional mode") {
    Dataset data;
    data.times = times;
    data.Y = X;
    // perfect fit: residual sum 0, lambda* = a / B0
    const double a = 0.5 * 1 * 6 + prior.A0 - 1.0;
    RelaxedParams params{a / prior.B0, th, X};
    const Vector grad = relaxed_gradient(lin, params, data, 1e-4, prior, m);
    CHECK(grad.cwiseAbs().maxCoeff() <= 1e-12);
  }

  SUBCASE("finite-difference agreement at a random point") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> noise(0.0, 0.3);
    Dataset data;
    data.times = times;
    data.Y = X;
    for (int i = 0; i < data.Y.rows(); ++i) data.Y(i, 0) += noise(rng);

    RelaxedParams params{1.7, th, X};
    params.X(2, 0) += 0.2;
    const double tau = 1e-3;
    const Vector grad = relaxed_gradient(lin, params, data, tau, prior, m);
    const Vector v = pack_relaxed(params);
    auto f = [&](const Vector& vv) {
      return relaxed_nll(lin, unpack_relaxed(vv, 1, 6, 1), data, tau, prior, m);
    };
    Vector fd(v.size());
    for (int a = 0; a < v.size(); ++a) {
      const double h = fd_step(v[a], 1e-6);
      Vector vp = v, vm = v;
      vp[a] += h;
      vm[a] -= h;
      fd[a] = (f(vp) - f(vm)) / (2.0 * h);
    }
    CHECK(rel_error(fd, grad) <= 1e-6);
  }
}

TEST_CASE("relaxed_hessian block identities") {
  const auto fn = fitzhugh_nagumo_model();
  const int n = 200;
  const auto times = linspace(0.0, 20.0, n + 1);
  Dataset data;
  data.times = times;
  data.Y = Matrix::Zero(n + 1, 2);
  Vector th(3);
  th << 0.2, 0.2, 3.0;
  Matrix X = Matrix::Constant(n + 1, 2, 0.1);

  auto prior = wide_prior(3, 2, 2.0, 1e-3);
  RelaxedParams params{4.0, th, X};
  const Matrix H = relaxed_hessian(fn, params, data, 1e-5, prior, 1);

  SUBCASE("lambda-lambda entry") {
    // a = 2*201/2 + 2 - 1 = 202; a / lambda^2 = 202/16
    CHECK(H(0, 0) == doctest::Approx(12.625).epsilon(1e-14));
  }
  SUBCASE("theta-lambda block is exactly zero") {
    CHECK(H.block(1, 0, 3, 1).cwiseAbs().maxCoeff() == 0.0);
    CHECK(H.block(0, 1, 1, 3).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("x_i-lambda column is x_i - y_i") {
    for (int i = 0; i <= n; ++i) {
      const Vector expect = (X.row(i) - data.Y.row(i)).transpose();
      CHECK((H.block(4 + 2 * i, 0, 2, 1) - expect).cwiseAbs().maxCoeff() ==
            0.0);
    }
  }
  SUBCASE("block tridiagonal in the states") {
    for (int i = 0; i <= n; ++i)
      for (int j = 0; j <= n; ++j)
        if (std::abs(i - j) >= 2)
          CHECK(H.block(4 + 2 * i, 4 + 2 * j, 2, 2).cwiseAbs().maxCoeff() ==
                0.0);
  }
  SUBCASE("terminal state block") {
    const Matrix expect =
        (1.0 / 1e-5 + params.lambda) * Matrix::Identity(2, 2);
    CHECK((H.block(4 + 2 * n, 4 + 2 * n, 2, 2) - expect)
              .cwiseAbs()
              .maxCoeff() <= 1e-9);
  }
  SUBCASE("symmetric") {
    CHECK((H - H.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("relaxed_hessian matches dense finite differences (FN, n=20)") {
  const auto fn = fitzhugh_nagumo_model();
  const int n = 20;
  const auto times = linspace(0.0, 2.0, n + 1);
  Vector x0(2), th(3);
  x0 << -1.0, -1.0;
  th << 0.2, 0.2, 3.0;
  const int m = 2;
  const Matrix truth = recursion_states(fn, x0, th, times, m);

  std::mt19937_64 rng(17);
  std::normal_distribution<double> noise(0.0, 0.2);
  Dataset data;
  data.times = times;
  data.Y = truth;
  for (int i = 0; i < data.Y.rows(); ++i)
    for (int j = 0; j < 2; ++j) data.Y(i, j) += noise(rng);

  const auto prior = wide_prior(3, 2);
  const double tau = 1e-2;  // mild conditioning keeps FD meaningful
  RelaxedParams params{1.3, th, truth};
  const Matrix H = relaxed_hessian(fn, params, data, tau, prior, m);

  const Vector v = pack_relaxed(params);
  const Matrix Hfd = fd_hessian(
      [&](const Vector& vv) {
        return relaxed_nll(fn, unpack_relaxed(vv, 3, n + 1, 2), data, tau,
                           prior, m);
      },
      v, 1e-4);
  CHECK(rel_error(H, Hfd) <= 1e-4);
}

TEST_CASE("original_nll") {
  const auto lin = linear_test_model();
  const auto times = linspace(0.0, 2.0, 6);
  Vector x0(1), th(1);
  x0 << 1.0;
  th << -0.7;
  const auto prior = wide_prior(1, 1, 1.0, 0.5);

  Dataset data;
  data.times = times;
  data.Y = solve_reference(lin, x0, th, times);

  OriginalParams params{2.0, th, x0};
  const double a = 0.5 * 1 * 6 + prior.A0 - 1.0;
  const double clean = original_nll(lin, params, data, prior);
  CHECK(clean ==
        doctest::Approx(-a * std::log(2.0) + 0.5 * 2.0).epsilon(1e-9));

  SUBCASE("deterministic re-evaluation is bit-identical") {
    CHECK(original_nll(lin, params, data, prior) == clean);
  }
  SUBCASE("noisy data increases the nll") {
    Dataset noisy = data;
    std::mt19937_64 rng(23);
    std::normal_distribution<double> noise(0.0, 0.5);
    for (int i = 0; i < noisy.Y.rows(); ++i) noisy.Y(i, 0) += noise(rng);
    CHECK(original_nll(lin, params, noisy, prior) > clean);
  }
}

TEST_CASE("original_hessian") {
  SUBCASE("lambda-lambda entry") {
    const auto fn = fitzhugh_nagumo_model();
    const int n = 200;
    const auto times = linspace(0.0, 20.0, n + 1);
    Vector x0(2), th(3);
    x0 << -1.0, -1.0;
    th << 0.2, 0.2, 3.0;
    SolveOptions opts;
    opts.fixed_subdivision = 16;
    Dataset data;
    data.times = times;
    data.Y = solve_reference(fn, x0, th, times, opts);
    const auto prior = wide_prior(3, 2, 1.0, 1e-3);
    OriginalParams params{2.0, th, x0};
    const auto result = original_hessian(fn, params, data, prior, opts);
    // a = 201; a / lambda^2 = 201/4
    CHECK(result.H(0, 0) == doctest::Approx(50.25).epsilon(1e-14));
    // zero-residual data: the theta-lambda block vanishes (up to the tiny
    // mismatch between the data solver and the fixed-subdivision solver)
    CHECK(result.H.block(1, 0, 3, 1).cwiseAbs().maxCoeff() <= 1e-6);
  }

  SUBCASE("matches finite differences of original_nll (FN, n=20)") {
    const auto fn = fitzhugh_nagumo_model();
    const int n = 20;
    const auto times = linspace(0.0, 2.0, n + 1);
    Vector x0(2), th(3);
    x0 << -1.0, -1.0;
    th << 0.2, 0.2, 3.0;
    Dataset data;
    data.times = times;
    data.Y = solve_reference(fn, x0, th, times);
    std::mt19937_64 rng(31);
    std::normal_distribution<double> noise(0.0, 0.3);
    for (int i = 0; i < data.Y.rows(); ++i)
      for (int j = 0; j < 2; ++j) data.Y(i, j) += noise(rng);

    const auto prior = wide_prior(3, 2);
    OriginalParams params{1.5, th, x0};
    SolveOptions opts;
    opts.fixed_subdivision = 32;  // same discrete map on both sides
    const auto result = original_hessian(fn, params, data, prior, opts);

    Vector v(6);
    v << params.lambda, th, x0;
    const Matrix Hfd = fd_hessian(
        [&](const Vector& vv) {
          OriginalParams pp{vv[0], vv.segment(1, 3), vv.tail(2)};
          return original_nll(fn, pp, data, prior, opts);
        },
        v, 1e-4);
    CHECK(rel_error(result.H, Hfd) <= 1e-3);
    CHECK((result.H - result.H.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("relaxed model approaches the original model as m grows") {
  const auto fn = fitzhugh_nagumo_model();
  const auto times = linspace(0.0, 5.0, 51);
  Vector x0(2), th(3);
  x0 << -1.0, -1.0;
  th << 0.2, 0.2, 3.0;
  const Matrix ref = solve_reference(fn, x0, th, times);

  // transition sum with X pinned to the reference solution
  auto transition_sum = [&](int m) {
    double s = 0.0;
    for (size_t i = 0; i + 1 < times.size(); ++i) {
      const double h = times[i + 1] - times[i];
      const Vector g = compose_flow(fn, ref.row(i).transpose(), times[i], th,
                                    StepConfig(h, m), false)
                           .value;
      s += (ref.row(i + 1).transpose() - g).squaredNorm();
    }
    return s;
  };
  double prev = transition_sum(1);
  for (int m : {2, 4, 8}) {
    const double cur = transition_sum(m);
    CHECK(cur < prev);
    prev = cur;
  }
  CHECK(prev <= 1e-12);
}

TEST_CASE("bound violations raise domain errors") {
  const auto lin = linear_test_model();
  Dataset data;
  data.times = {0.0, 1.0};
  data.Y = Matrix::Zero(2, 1);
  Prior prior;
  prior.theta_bounds = {{0.0, 1.0}};
  prior.x0_bounds = {{-1.0, 1.0}};
  Vector th(1);
  th << 2.0;  // outside
  RelaxedParams params{1.0, th, Matrix::Zero(2, 1)};
  CHECK_THROWS_AS(relaxed_nll(lin, params, data, 1e-3, prior, 1), DomainError);
  params.theta[0] = 0.5;
  params.lambda = -1.0;
  CHECK_THROWS_AS(relaxed_nll(lin, params, data, 1e-3, prior, 1), DomainError);
}
