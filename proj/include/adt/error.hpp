#pragma once

#include <stdexcept>
#include <string>

namespace adt {

// Exception hierarchy. The C API maps each family onto a status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad shapes, out-of-range labels, violated preconditions.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by an operation, or a non-convergent numeric routine.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace adt
