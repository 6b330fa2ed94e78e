#pragma once

#include <stdexcept>
#include <string>

namespace coxsub {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller-supplied argument is out of range or inconsistent.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Input data violates the dataset contract (bad cell, missing column, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Floating-point failure: overflow, singular matrix, empty risk set.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// An iterative solver stopped without meeting its tolerance.
class ConvergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace coxsub
