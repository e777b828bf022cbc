#pragma once

#include <stdexcept>
#include <string>

namespace glow {

// Base class for all library errors. The CLI maps subclasses to exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dimension or layout mismatch between tensors/parameters.
struct ShapeError : Error {
  using Error::Error;
};

// A matrix or scale vector is (numerically) non-invertible.
struct SingularError : Error {
  using Error::Error;
};

// An operation was called in the wrong lifecycle state (e.g. actnorm used
// before data-dependent initialization, or initialized twice).
struct StateError : Error {
  using Error::Error;
};

// NaN/Inf surfaced in an activation, log-determinant or gradient.
struct NumericsError : Error {
  using Error::Error;
};

// Corrupt or inconsistent input data (files, datasets, checkpoints).
struct DataError : Error {
  using Error::Error;
};

// Invalid user-supplied argument or configuration.
struct ArgError : Error {
  using Error::Error;
};

// A brute-force oracle was asked for a problem above its cost guard.
struct CostGuardError : Error {
  using Error::Error;
};

}  // namespace glow
