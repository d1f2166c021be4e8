#pragma once

#include <stdexcept>
#include <string>

namespace mim {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents that do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced or consumed, or a numeric precondition violated.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or inconsistent input data (files, manifests, labels).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Bad command-line usage or configuration keys.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace mim
