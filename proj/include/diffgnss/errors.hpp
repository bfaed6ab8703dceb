#pragma once

#include <stdexcept>
#include <string>

namespace diffgnss {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input outside the mathematical domain of an operation (latitude > 90°,
/// elevation below the horizon, coincident points, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Satellite geometry that cannot be solved (rank-deficient normal matrix).
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Non-finite iterates, non-convergence that cannot be recovered from.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Shape or size mismatch between arguments.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed input files: missing columns, bad headers, unreadable paths.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace diffgnss
