#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "odelap/common.hpp"
#include "odelap/laplace.hpp"
#include "odelap/posterior.hpp"

namespace odelap {

/// The point treated as the posterior mode (stand-in for an external
/// variational point estimate).
struct ModeEstimate {
  double lambda = 1.0;
  Vector theta;
  Matrix X;  // (n+1) x p
  std::string provenance = "optimized";  // optimized | loaded
  double grad_sup_norm = 0.0;
  int sweeps = 0;
};

struct MapSettings {
  double grad_tol = 1e-6;
  int max_sweeps = 200;
  int max_backtracks = 50;
  double armijo = 1e-4;
};

/// Closed-form conditional mode of lambda given the states.
inline double lambda_conditional_mode(int p, int n, const Prior& prior,
                                      double residual_sum) {
  return (0.5 * p * (n + 1) + prior.A0 - 1.0) /
         (prior.B0 + 0.5 * residual_sum);
}

namespace detail {

inline void project_bounds(Vector& theta, Matrix& X, const Prior& prior) {
  for (size_t k = 0; k < prior.theta_bounds.size(); ++k)
    theta[k] = std::clamp(theta[k], prior.theta_bounds[k].first,
                          prior.theta_bounds[k].second);
  for (size_t j = 0; j < prior.x0_bounds.size(); ++j)
    X(0, j) = std::clamp(X(0, j), prior.x0_bounds[j].first,
                         prior.x0_bounds[j].second);
}

}  // namespace detail

/// Block-coordinate MAP for the relaxed posterior: closed-form lambda
/// update alternating with damped Newton steps on (theta, X), backtracking
/// line search and bound projection.
inline ModeEstimate fit_map(const OdeModel& model, const Dataset& data,
                            double tau, int m, const Prior& prior,
                            std::optional<RelaxedParams> init = {},
                            const MapSettings& settings = {}) {
  data.validate();
  prior.validate();
  const int p = model.p, q = model.q, n = data.n_intervals();

  RelaxedParams cur;
  if (init) {
    cur = *init;
  } else {
    cur.X = data.Y;
    cur.theta.resize(q);
    for (int k = 0; k < q; ++k)
      cur.theta[k] =
          0.5 * (prior.theta_bounds[k].first + prior.theta_bounds[k].second);
    cur.lambda = 1.0;
  }
  detail::project_bounds(cur.theta, cur.X, prior);
  cur.lambda = lambda_conditional_mode(p, n, prior,
                                       (data.Y - cur.X).squaredNorm());

  double obj = relaxed_nll(model, cur, data, tau, prior, m);
  const int block = q + (n + 1) * p;  // (theta, X) coordinates

  ModeEstimate mode;
  for (int sweep = 0; sweep < settings.max_sweeps; ++sweep) {
    cur.lambda = lambda_conditional_mode(p, n, prior,
                                         (data.Y - cur.X).squaredNorm());
    obj = relaxed_nll(model, cur, data, tau, prior, m);

    const Vector grad = relaxed_gradient(model, cur, data, tau, prior, m);
    mode.grad_sup_norm = grad.cwiseAbs().maxCoeff();
    mode.sweeps = sweep;
    if (mode.grad_sup_norm <= settings.grad_tol) break;

    const Matrix H_full = relaxed_hessian(model, cur, data, tau, prior, m);
    const Matrix Hb = H_full.bottomRightCorner(block, block);
    const Vector gb = grad.tail(block);

    // Damped Newton direction; increase the damping until factorizable.
    Vector dir;
    double mu = 0.0;
    const double diag_scale = Hb.diagonal().cwiseAbs().maxCoeff();
    for (int attempt = 0; attempt < 30; ++attempt) {
      Matrix Hd = Hb;
      if (mu > 0.0) Hd += mu * Matrix::Identity(block, block);
      Eigen::LLT<Matrix> llt(Hd);
      if (llt.info() == Eigen::Success) {
        dir = -llt.solve(gb);
        break;
      }
      mu = mu == 0.0 ? 1e-10 * std::max(1.0, diag_scale) : 10.0 * mu;
    }
    if (dir.size() == 0)
      throw StalledOptimizationError(
          "Newton system could not be stabilized at sweep " +
          std::to_string(sweep));

    // Backtracking with projection onto the prior box.  A trial point
    // where the flow map blows up counts as a rejected step.
    auto backtrack = [&](const Vector& d) {
      const double slope = gb.dot(d);
      double alpha = 1.0;
      for (int bt = 0; bt < settings.max_backtracks; ++bt) {
        RelaxedParams trial = cur;
        trial.theta += alpha * d.head(q);
        for (int i = 0; i <= n; ++i)
          trial.X.row(i) += alpha * d.segment(q + i * p, p).transpose();
        detail::project_bounds(trial.theta, trial.X, prior);
        double trial_obj;
        try {
          trial_obj = relaxed_nll(model, trial, data, tau, prior, m);
        } catch (const IntegrationError&) {
          alpha *= 0.5;
          continue;
        }
        if (!std::isfinite(trial_obj)) {
          alpha *= 0.5;
          continue;
        }
        if (trial_obj <= obj + settings.armijo * alpha * slope ||
            trial_obj < obj) {
          cur = trial;
          obj = trial_obj;
          return true;
        }
        alpha *= 0.5;
      }
      return false;
    };

    bool accepted = backtrack(dir);
    if (!accepted) {
      // Newton direction made no progress; fall back to steepest descent.
      const Vector gd = -gb / std::max(1.0, gb.cwiseAbs().maxCoeff());
      accepted = backtrack(gd);
    }
    if (!accepted)
      throw StalledOptimizationError(
          "objective failed to decrease across a full sweep (sweep " +
          std::to_string(sweep) + ", |grad| = " +
          std::to_string(mode.grad_sup_norm) + ")");
  }

  mode.lambda = cur.lambda;
  mode.theta = cur.theta;
  mode.X = cur.X;
  mode.provenance = "optimized";
  return mode;
}

/// MCMC draws over (lambda, theta, x0) with bookkeeping.
struct Chain {
  Matrix samples;  // draws x (1+q+p)
  long accepted = 0;
  long iterations = 0;
  double acceptance_rate = 0.0;
};

struct McmcSettings {
  long iterations = 30000;
  long burn_in = 5000;
  int thin = 30;
  int dr_stages = 2;          // 1 = plain AM, 2 = one delayed-rejection stage
  long adapt_start = 1000;
  long adapt_interval = 100;
  double dr_shrink = 0.5;     // second-stage proposal scale
  std::uint64_t seed = 0;
  int solver_substeps = 8;    // fixed RK4 substeps per interval in the target
  std::optional<Matrix> init_proposal;  // proposal covariance seed
  // Test hook: replaces the original-model negative log posterior.
  std::function<double(const Vector&)> target_override;
};

namespace detail {

inline bool in_support(const Vector& v, int q, int p, const Prior& prior) {
  if (v[0] <= 0.0) return false;
  for (int k = 0; k < q; ++k)
    if (v[1 + k] < prior.theta_bounds[k].first ||
        v[1 + k] > prior.theta_bounds[k].second)
      return false;
  for (int j = 0; j < p; ++j)
    if (v[1 + q + j] < prior.x0_bounds[j].first ||
        v[1 + q + j] > prior.x0_bounds[j].second)
      return false;
  return true;
}

}  // namespace detail

/// Adaptive random-walk Metropolis on the original-model posterior with an
/// optional one-stage delayed rejection (shrunk second proposal).
inline Chain run_mcmc(const OdeModel& model, const Dataset& data,
                      const Prior& prior, const ModeEstimate& start,
                      const McmcSettings& settings) {
  data.validate();
  prior.validate();
  const int p = model.p, q = model.q, d = 1 + q + p;
  require(settings.dr_stages >= 1 && settings.dr_stages <= 2,
          "dr_stages must be 1 or 2");
  require(settings.thin >= 1 && settings.burn_in >= 0 &&
              settings.iterations > settings.burn_in,
          "inconsistent chain length settings");

  SolveOptions solve_opts;
  solve_opts.fixed_subdivision = settings.solver_substeps;
  auto neg_log_post = [&](const Vector& v) {
    if (settings.target_override) return settings.target_override(v);
    OriginalParams params;
    params.lambda = v[0];
    params.theta = v.segment(1, q);
    params.x0 = v.tail(p);
    return original_nll(model, params, data, prior, solve_opts);
  };

  Vector cur(d);
  cur[0] = start.lambda;
  cur.segment(1, q) = start.theta;
  cur.tail(p) = start.X.row(0).transpose();
  require(detail::in_support(cur, q, p, prior),
          "MCMC start point outside the prior support");
  double cur_nll = neg_log_post(cur);

  Matrix prop_cov;
  if (settings.init_proposal) {
    prop_cov = *settings.init_proposal;
    require(prop_cov.rows() == d && prop_cov.cols() == d,
            "initial proposal covariance has wrong dimension");
  } else {
    prop_cov = Matrix::Zero(d, d);
    prop_cov(0, 0) = std::pow(0.1 * cur[0], 2);
    for (int k = 0; k < q; ++k) {
      const double w =
          prior.theta_bounds[k].second - prior.theta_bounds[k].first;
      prop_cov(1 + k, 1 + k) = std::pow(w / 100.0, 2);
    }
    for (int j = 0; j < p; ++j) {
      const double w = prior.x0_bounds[j].second - prior.x0_bounds[j].first;
      prop_cov(1 + q + j, 1 + q + j) = std::pow(w / 100.0, 2);
    }
  }

  std::mt19937_64 rng(settings.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Matrix L = detail::cholesky_or_pivot(
      prop_cov + 1e-12 * prop_cov.diagonal().maxCoeff() *
                     Matrix::Identity(d, d));
  Eigen::LLT<Matrix> prop_llt;  // for the DR backward-kernel ratio
  auto refresh_factor = [&](const Matrix& cov) {
    Matrix reg = cov + 1e-8 * Matrix::Identity(d, d);
    Eigen::LLT<Matrix> llt(reg);
    if (llt.info() == Eigen::Success) {
      L = llt.matrixL();
      prop_llt = llt;
    }
  };
  refresh_factor(prop_cov);

  auto quad_form = [&](const Vector& diff) {
    // diff^T Sigma^-1 diff with the current proposal covariance
    Vector y = prop_llt.matrixL().solve(diff);
    return y.squaredNorm();
  };

  // Running moments for adaptation (all past states, burn-in included).
  Vector run_mean = cur;
  Matrix run_m2 = Matrix::Zero(d, d);
  long run_count = 1;

  auto draw_proposal = [&](const Vector& center, double scale) {
    Vector z(d);
    for (int i = 0; i < d; ++i) z[i] = normal(rng);
    return Vector(center + scale * (L * z));
  };

  const long n_draws = (settings.iterations - settings.burn_in) / settings.thin;
  Chain chain;
  chain.samples.resize(n_draws, d);
  long stored = 0;
  long accepted_post_burnin = 0, post_burnin_iters = 0;

  for (long it = 1; it <= settings.iterations; ++it) {
    bool accepted = false;
    const Vector y1 = draw_proposal(cur, 1.0);
    double y1_nll = std::numeric_limits<double>::infinity();
    double alpha1 = 0.0;
    if (detail::in_support(y1, q, p, prior)) {
      try {
        y1_nll = neg_log_post(y1);
        alpha1 = std::min(1.0, std::exp(cur_nll - y1_nll));
      } catch (const IntegrationError&) {
      }
    }
    if (unif(rng) < alpha1) {
      cur = y1;
      cur_nll = y1_nll;
      accepted = true;
    } else if (settings.dr_stages == 2) {
      // Second-stage candidate from the shrunk proposal.
      const Vector y2 = draw_proposal(cur, settings.dr_shrink);
      if (detail::in_support(y2, q, p, prior)) {
        try {
          const double y2_nll = neg_log_post(y2);
          const double a_y2_y1 = std::min(1.0, std::exp(y2_nll - y1_nll));
          if (a_y2_y1 < 1.0 && alpha1 < 1.0) {
            const double log_q_ratio =
                0.5 * (quad_form(y1 - cur) - quad_form(y1 - y2));
            const double log_alpha2 =
                (cur_nll - y2_nll) + log_q_ratio +
                std::log1p(-a_y2_y1) - std::log1p(-alpha1);
            if (std::log(unif(rng)) < log_alpha2) {
              cur = y2;
              cur_nll = y2_nll;
              accepted = true;
            }
          }
        } catch (const IntegrationError&) {
        }
      }
    }

    if (accepted) {
      ++chain.accepted;
      if (it > settings.burn_in) ++accepted_post_burnin;
    }
    if (it > settings.burn_in) {
      ++post_burnin_iters;
      if ((it - settings.burn_in) % settings.thin == 0 && stored < n_draws)
        chain.samples.row(stored++) = cur.transpose();
    }

    // Welford update of the chain moments, then periodic adaptation.
    ++run_count;
    const Vector delta = cur - run_mean;
    run_mean += delta / static_cast<double>(run_count);
    run_m2 += delta * (cur - run_mean).transpose();
    if (it >= settings.adapt_start && it % settings.adapt_interval == 0) {
      const Matrix emp = run_m2 / static_cast<double>(run_count - 1);
      refresh_factor((2.38 * 2.38 / d) * emp);
    }
  }
  chain.iterations = settings.iterations;
  chain.acceptance_rate =
      static_cast<double>(chain.accepted) / settings.iterations;

  if (post_burnin_iters > 0 &&
      static_cast<double>(accepted_post_burnin) / post_burnin_iters < 0.005)
    throw MixingError("post-burn-in acceptance below 0.5%",
                      static_cast<double>(accepted_post_burnin) /
                          post_burnin_iters);
  chain.samples.conservativeResize(stored, d);
  return chain;
}

/// Concurrent chains with consecutive seeds, merged by concatenation.
inline Chain run_mcmc_chains(const OdeModel& model, const Dataset& data,
                             const Prior& prior, const ModeEstimate& start,
                             const McmcSettings& settings, int n_chains) {
  require(n_chains >= 1, "need at least one chain");
  std::vector<Chain> chains(n_chains);
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(n_chains);
  for (int c = 0; c < n_chains; ++c) {
    workers.emplace_back([&, c]() {
      try {
        McmcSettings s = settings;
        s.seed = settings.seed + static_cast<std::uint64_t>(c);
        chains[c] = run_mcmc(model, data, prior, start, s);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  Chain merged;
  long total = 0;
  for (const auto& c : chains) total += c.samples.rows();
  merged.samples.resize(total, chains[0].samples.cols());
  long row = 0;
  for (const auto& c : chains) {
    merged.samples.middleRows(row, c.samples.rows()) = c.samples;
    row += c.samples.rows();
    merged.accepted += c.accepted;
    merged.iterations += c.iterations;
  }
  merged.acceptance_rate =
      static_cast<double>(merged.accepted) / merged.iterations;
  return merged;
}

/// Unbiased sample covariance over the kept coordinates.
inline CovarianceReport sample_covariance(const Chain& chain,
                                          const std::vector<int>& keep,
                                          std::vector<std::string> labels) {
  const long n = chain.samples.rows();
  require(n >= 2, "need at least two draws for a covariance");
  const int k = static_cast<int>(keep.size());
  Matrix sub(n, k);
  for (int j = 0; j < k; ++j) sub.col(j) = chain.samples.col(keep[j]);
  const Vector mean = sub.colwise().mean();
  const Matrix centered = sub.rowwise() - mean.transpose();
  const Matrix cov =
      centered.transpose() * centered / static_cast<double>(n - 1);

  CovarianceReport report;
  report.method = "mcmc-oracle";
  report.labels = std::move(labels);
  report.covariance = SymmetricMatrix(cov);
  report.variances = report.covariance.dense().diagonal();
  if ((report.variances.array() <= 0.0).any()) {
    report.flags.push_back("degenerate-coordinate");
    Matrix R = Matrix::Identity(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j)
        if (i != j && report.variances[i] > 0.0 && report.variances[j] > 0.0)
          R(i, j) = cov(i, j) /
                    std::sqrt(report.variances[i] * report.variances[j]);
    report.correlation = SymmetricMatrix(R);
  } else {
    report.correlation = correlation_from(report.covariance);
  }
  return report;
}

struct ReportComparison {
  std::vector<std::string> methods;
  std::vector<std::string> labels;
  Matrix cov_frobenius;         // pairwise, over valid reports
  Matrix corr_frobenius;
  Matrix variance_ratios;       // methods x labels, relative to the largest
  std::vector<bool> valid;
};

/// Pairwise Frobenius distances and per-parameter variance ratios
/// relative to the largest estimate; invalid reports are excluded.
inline ReportComparison compare_reports(
    const std::vector<CovarianceReport>& reports) {
  require(!reports.empty(), "no reports to compare");
  const auto& labels = reports.front().labels;
  for (const auto& r : reports)
    require(r.labels == labels, "reports carry mismatched labels");

  ReportComparison cmp;
  cmp.labels = labels;
  const int nr = static_cast<int>(reports.size());
  for (const auto& r : reports) {
    cmp.methods.push_back(r.method);
    cmp.valid.push_back(r.valid());
  }
  bool any_valid = false;
  for (bool v : cmp.valid) any_valid = any_valid || v;
  require(any_valid, "all reports are invalid");

  const int nl = static_cast<int>(labels.size());
  cmp.cov_frobenius = Matrix::Constant(nr, nr, -1.0);
  cmp.corr_frobenius = Matrix::Constant(nr, nr, -1.0);
  for (int i = 0; i < nr; ++i)
    for (int j = 0; j < nr; ++j)
      if (cmp.valid[i] && cmp.valid[j]) {
        cmp.cov_frobenius(i, j) =
            frobenius_distance(reports[i].covariance, reports[j].covariance);
        cmp.corr_frobenius(i, j) =
            frobenius_distance(reports[i].correlation, reports[j].correlation);
      }

  cmp.variance_ratios = Matrix::Constant(nr, nl, -1.0);
  for (int l = 0; l < nl; ++l) {
    double largest = 0.0;
    for (int i = 0; i < nr; ++i)
      if (cmp.valid[i]) largest = std::max(largest, reports[i].variances[l]);
    for (int i = 0; i < nr; ++i)
      if (cmp.valid[i] && largest > 0.0)
        cmp.variance_ratios(i, l) = reports[i].variances[l] / largest;
  }
  return cmp;
}

}  // namespace odelap
