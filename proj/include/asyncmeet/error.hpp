#pragma once

#include <stdexcept>
#include <string>

namespace asyncmeet {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data violates an operation's precondition.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// File could not be read, written or parsed.
class IoError : public Error {
 public:
  using Error::Error;
};

// Numerical procedure could not produce a finite answer.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace asyncmeet
