#pragma once

#include <stdexcept>
#include <string>

namespace lula {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefinite : public Error {
 public:
  using Error::Error;
};

/// Malformed or incompatible file contents (model files, CSV, augmentation records).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss, objective or prediction.
class NumericError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace lula
