#pragma once

#include <stdexcept>
#include <string>

namespace blochri {

// Bad input: malformed config, out-of-range argument, mismatched basis/spec.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

class GeometryMismatch : public ValidationError {
 public:
  explicit GeometryMismatch(const std::string& what) : ValidationError(what) {}
};

// Quadrature grid too coarse for a meaningful ensemble average.
class CoarseQuadrature : public ValidationError {
 public:
  explicit CoarseQuadrature(const std::string& what) : ValidationError(what) {}
};

// Non-finite values or a solver that did not converge.
class NumericalFailure : public std::runtime_error {
 public:
  explicit NumericalFailure(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace blochri
