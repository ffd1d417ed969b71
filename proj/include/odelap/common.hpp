#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace odelap {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Bad user input: dimension mismatch, malformed file, out-of-bounds value.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

/// Point outside the support of the (uniform) prior.
class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values produced during integration or a flow-map stage.
class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& what, double blow_up_time)
      : std::runtime_error(what), blow_up_time(blow_up_time) {}
  double blow_up_time;
};

/// Cholesky factorization failed; `pivot` is the first non-positive pivot.
class NotPdError : public std::runtime_error {
 public:
  NotPdError(const std::string& what, int pivot)
      : std::runtime_error(what), pivot(pivot) {}
  int pivot;
};

class SingularMatrixError : public std::runtime_error {
 public:
  explicit SingularMatrixError(const std::string& what)
      : std::runtime_error(what) {}
};

class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what)
      : std::runtime_error(what) {}
};

/// MAP optimizer failed to decrease the objective over a full sweep.
class StalledOptimizationError : public std::runtime_error {
 public:
  explicit StalledOptimizationError(const std::string& what)
      : std::runtime_error(what) {}
};

/// MCMC acceptance collapsed (< 0.5% after burn-in).
class MixingError : public std::runtime_error {
 public:
  MixingError(const std::string& what, double acceptance_rate)
      : std::runtime_error(what), acceptance_rate(acceptance_rate) {}
  double acceptance_rate;
};

/// Too many dropped samples while building a credible band.
class BandError : public std::runtime_error {
 public:
  explicit BandError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InputError(what);
}

}  // namespace odelap
