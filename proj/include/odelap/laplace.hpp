#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "odelap/common.hpp"
#include "odelap/model.hpp"
#include "odelap/sensitivity.hpp"

namespace odelap {

enum class PdStatus { verified_pd, repaired, unverified };

inline std::string to_string(PdStatus s) {
  switch (s) {
    case PdStatus::verified_pd: return "verified-PD";
    case PdStatus::repaired: return "repaired";
    default: return "unverified";
  }
}

/// Dense symmetric matrix with positive-definiteness metadata.
class SymmetricMatrix {
 public:
  SymmetricMatrix() = default;
  explicit SymmetricMatrix(const Matrix& m,
                           PdStatus status = PdStatus::unverified)
      : mat_(0.5 * (m + m.transpose())), status_(status) {
    require(m.rows() == m.cols(), "symmetric matrix must be square");
  }

  int dim() const { return static_cast<int>(mat_.rows()); }
  const Matrix& dense() const { return mat_; }
  double operator()(int i, int j) const { return mat_(i, j); }
  PdStatus pd_status() const { return status_; }
  void set_pd_status(PdStatus s) { status_ = s; }

 private:
  Matrix mat_;
  PdStatus status_ = PdStatus::unverified;
};

namespace detail {

/// Cholesky that reports the first failing pivot on non-PD input.
inline Matrix cholesky_or_pivot(const Matrix& A) {
  const int n = static_cast<int>(A.rows());
  Matrix L = Matrix::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    double d = A(j, j) - L.row(j).head(j).squaredNorm();
    if (!(d > 0.0) || !std::isfinite(d))
      throw NotPdError("matrix is not positive definite (pivot " +
                           std::to_string(j) + ")",
                       j);
    L(j, j) = std::sqrt(d);
    for (int i = j + 1; i < n; ++i)
      L(i, j) =
          (A(i, j) - L.row(i).head(j).dot(L.row(j).head(j))) / L(j, j);
  }
  return L;
}

}  // namespace detail

/// Inverse via Cholesky; throws NotPdError with the failing pivot index.
inline SymmetricMatrix invert_full(const SymmetricMatrix& H) {
  const Matrix L = detail::cholesky_or_pivot(H.dense());
  const int n = H.dim();
  const Matrix Linv =
      L.triangularView<Eigen::Lower>().solve(Matrix::Identity(n, n));
  return SymmetricMatrix(Linv.transpose() * Linv, PdStatus::verified_pd);
}

/// Covariance of the kept coordinates: (A - B D^-1 C)^-1 with the
/// complement block D marginalized.
inline SymmetricMatrix schur_block_covariance(const SymmetricMatrix& H,
                                              const std::vector<int>& keep) {
  const int n = H.dim();
  const int k = static_cast<int>(keep.size());
  require(k >= 1 && k <= n, "keep set must be a nonempty subset");
  std::vector<bool> kept(n, false);
  for (int idx : keep) {
    require(idx >= 0 && idx < n, "keep index out of range");
    kept[idx] = true;
  }
  if (k == n) {
    // No complement to marginalize; still honor the keep ordering.
    const SymmetricMatrix full = invert_full(H);
    Matrix perm(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) perm(i, j) = full(keep[i], keep[j]);
    return SymmetricMatrix(perm, PdStatus::verified_pd);
  }

  std::vector<int> drop;
  drop.reserve(n - k);
  for (int i = 0; i < n; ++i)
    if (!kept[i]) drop.push_back(i);

  Matrix A(k, k), B(k, n - k), D(n - k, n - k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) A(i, j) = H(keep[i], keep[j]);
    for (int j = 0; j < n - k; ++j) B(i, j) = H(keep[i], drop[j]);
  }
  for (int i = 0; i < n - k; ++i)
    for (int j = 0; j < n - k; ++j) D(i, j) = H(drop[i], drop[j]);

  Eigen::LDLT<Matrix> ldlt(D);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().cwiseAbs().minCoeff() <= 0.0)
    throw SingularMatrixError("complement block is singular or indefinite");
  const Matrix S = A - B * ldlt.solve(B.transpose());
  return invert_full(SymmetricMatrix(S));
}

/// Schur complement itself (the reduced precision), without inversion.
inline SymmetricMatrix schur_complement(const SymmetricMatrix& H,
                                        const std::vector<int>& keep) {
  const int n = H.dim();
  std::vector<bool> kept(n, false);
  for (int idx : keep) kept[idx] = true;
  std::vector<int> drop;
  for (int i = 0; i < n; ++i)
    if (!kept[i]) drop.push_back(i);
  const int k = static_cast<int>(keep.size());
  if (drop.empty()) return H;

  Matrix A(k, k), B(k, drop.size()), D(drop.size(), drop.size());
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) A(i, j) = H(keep[i], keep[j]);
    for (size_t j = 0; j < drop.size(); ++j) B(i, j) = H(keep[i], drop[j]);
  }
  for (size_t i = 0; i < drop.size(); ++i)
    for (size_t j = 0; j < drop.size(); ++j) D(i, j) = H(drop[i], drop[j]);
  Eigen::LDLT<Matrix> ldlt(D);
  if (ldlt.info() != Eigen::Success ||
      ldlt.vectorD().cwiseAbs().minCoeff() <= 0.0)
    throw SingularMatrixError("complement block is singular");
  return SymmetricMatrix(A - B * ldlt.solve(B.transpose()));
}

/// Eigenvalue clipping to the floor delta; Frobenius-nearest PSD point
/// for symmetric input in the delta = 0 limit.
inline SymmetricMatrix nearest_pd(const SymmetricMatrix& M, double delta) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(M.dense());
  if (eig.info() != Eigen::Success)
    throw NumericalError("eigendecomposition failed in nearest_pd");
  Vector vals = eig.eigenvalues().cwiseMax(delta);
  SymmetricMatrix out(eig.eigenvectors() * vals.asDiagonal() *
                      eig.eigenvectors().transpose());
  out.set_pd_status(PdStatus::repaired);
  return out;
}

inline double default_pd_floor(const SymmetricMatrix& M) {
  return 1e-10 * std::max(1.0, M.dense().diagonal().cwiseAbs().maxCoeff());
}

inline SymmetricMatrix correlation_from(const SymmetricMatrix& cov) {
  const int n = cov.dim();
  Vector sd(n);
  for (int i = 0; i < n; ++i) {
    if (!(cov(i, i) > 0.0))
      throw DomainError("non-positive variance at index " + std::to_string(i) +
                        "; covariance fails the validity check");
    sd[i] = std::sqrt(cov(i, i));
  }
  Matrix R(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      R(i, j) = i == j ? 1.0 : cov(i, j) / (sd[i] * sd[j]);
  return SymmetricMatrix(R, cov.pd_status());
}

/// mean + L z with L the Cholesky factor; deterministic under seed.
inline Matrix sample_gaussian(const Vector& mean, const SymmetricMatrix& cov,
                              int count, std::uint64_t seed) {
  require(mean.size() == cov.dim(), "mean/covariance dimension mismatch");
  require(count >= 1, "sample count must be positive");
  const Matrix L = detail::cholesky_or_pivot(cov.dense());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(count, mean.size());
  Vector z(mean.size());
  for (int s = 0; s < count; ++s) {
    for (int i = 0; i < z.size(); ++i) z[i] = normal(rng);
    out.row(s) = (mean + L * z).transpose();
  }
  return out;
}

struct CredibleBand {
  std::vector<double> times;
  Matrix lower;  // (n+1) x p
  Matrix upper;
  int dropped = 0;
};

/// Pointwise band over sampled solution curves; ascending order statistics
/// ceil(0.025 count) and floor(0.975 count) (25th/975th of 1000).
inline CredibleBand credible_band(const OdeModel& model, const Vector& mean,
                                  const SymmetricMatrix& cov,
                                  const std::vector<double>& grid,
                                  int count = 1000, std::uint64_t seed = 0,
                                  const SolveOptions& solve_opts = {}) {
  require(mean.size() == model.q + model.p,
          "mean must cover (theta, x0)");
  const Matrix draws = sample_gaussian(mean, cov, count, seed);

  std::vector<Matrix> curves;
  curves.reserve(count);
  int dropped = 0;
  for (int s = 0; s < count; ++s) {
    try {
      curves.push_back(solve_reference(model,
                                       draws.row(s).tail(model.p).transpose(),
                                       draws.row(s).head(model.q).transpose(),
                                       grid, solve_opts));
    } catch (const IntegrationError&) {
      ++dropped;
    }
  }
  if (dropped > count / 20)
    throw BandError("more than 5% of band samples failed to integrate (" +
                    std::to_string(dropped) + " of " + std::to_string(count) +
                    ")");

  const int kept = static_cast<int>(curves.size());
  const int lo = std::max(1, static_cast<int>(std::ceil(0.025 * kept)));
  const int hi = std::min(kept, static_cast<int>(std::floor(0.975 * kept)));

  CredibleBand band;
  band.times = grid;
  band.dropped = dropped;
  band.lower.resize(grid.size(), model.p);
  band.upper.resize(grid.size(), model.p);
  std::vector<double> vals(kept);
  for (size_t i = 0; i < grid.size(); ++i)
    for (int j = 0; j < model.p; ++j) {
      for (int s = 0; s < kept; ++s) vals[s] = curves[s](i, j);
      std::sort(vals.begin(), vals.end());
      band.lower(i, j) = vals[lo - 1];  // 1-based ascending order statistic
      band.upper(i, j) = vals[hi - 1];
    }
  return band;
}

inline double frobenius_distance(const SymmetricMatrix& A,
                                 const SymmetricMatrix& B) {
  require(A.dim() == B.dim(), "matrix dimension mismatch");
  return (A.dense() - B.dense()).norm();
}

/// Covariance estimate with correlation and validity metadata.
struct CovarianceReport {
  std::string method;  // laplace-relaxed | laplace-original | mcmc-oracle
  std::vector<std::string> labels;
  SymmetricMatrix covariance;
  SymmetricMatrix correlation;
  Vector variances;
  std::vector<std::string> flags;

  bool valid() const {
    for (const auto& f : flags)
      if (f == "invalid-correlation" || f == "negative-variance") return false;
    return true;
  }
};

/// Derive correlation/variances from a covariance and flag the failure
/// modes (negative variances, correlations outside [-1, 1]).
inline CovarianceReport make_report(const std::string& method,
                                    std::vector<std::string> labels,
                                    const SymmetricMatrix& cov) {
  CovarianceReport report;
  report.method = method;
  report.labels = std::move(labels);
  report.covariance = cov;
  report.variances = cov.dense().diagonal();

  bool neg_var = (report.variances.array() <= 0.0).any();
  if (neg_var) {
    report.flags.push_back("negative-variance");
    report.correlation = SymmetricMatrix(Matrix::Zero(cov.dim(), cov.dim()));
    return report;
  }
  report.correlation = correlation_from(cov);
  const Matrix& R = report.correlation.dense();
  if ((R.array().abs() > 1.0 + 1e-12).any())
    report.flags.push_back("invalid-correlation");
  return report;
}

}  // namespace odelap
