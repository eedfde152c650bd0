#pragma once

#include <stdexcept>
#include <string>

namespace mvt {

/// Root of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent or invalid configuration (model, dataset, CLI).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A persisted file is malformed, truncated, or of an unsupported version.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A rendered shape projects to an empty silhouette in some view.
class DegenerateShapeError : public Error {
 public:
  using Error::Error;
};

/// The filesystem refused an operation.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mvt
