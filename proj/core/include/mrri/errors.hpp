#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mrri {

// Base class for all library failures. Subclasses carry structured context so
// callers can report what went wrong without re-deriving it.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidDomainError : public Error {
 public:
  using Error::Error;
};

class InfeasiblePartitionError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Symmetric positive-definite factorization failed even after the diagonal
// jitter ladder was exhausted. `attempted_jitters` holds the absolute jitter
// values that were tried, in order.
class NonPdError : public Error {
 public:
  NonPdError(const std::string& what, std::vector<double> jitters)
      : Error(what), attempted_jitters(std::move(jitters)) {}
  std::vector<double> attempted_jitters;
};

// Optimizer ran out of iterations. Carries the best iterate seen (packed
// parameter vector in layout order) so callers can inspect or restart.
class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, std::vector<double> iterate,
                      double grad_norm, int iterations)
      : Error(what),
        best_iterate(std::move(iterate)),
        gradient_norm(grad_norm),
        iterations(iterations) {}
  std::vector<double> best_iterate;
  double gradient_norm = 0.0;
  int iterations = 0;
};

class SingularVariabilityError : public Error {
 public:
  using Error::Error;
};

// Godambe information failed its positive-definiteness check.
class ConditioningError : public Error {
 public:
  using Error::Error;
};

// Requested problem size exceeds the dense-factorization capacity cap.
class CapacityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mrri
