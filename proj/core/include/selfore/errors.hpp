#pragma once

#include <stdexcept>
#include <string>

namespace selfore {

/// Base of every error thrown by the library. The CLI maps each subclass to
/// an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad invocation or configuration (exit code 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or a numeric routine that cannot proceed (exit code 3).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Mismatched matrix/vector dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace selfore
