#pragma once

#include <stdexcept>
#include <string>

namespace dmcl {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid hyper-parameter, threshold ordering, unknown enum value, ...
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent dataset content.
class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss, zero-norm embedding and similar numeric failures.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dmcl
