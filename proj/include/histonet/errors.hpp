#pragma once

#include <stdexcept>
#include <string>

namespace histonet {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes (data → 2, numeric → 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace histonet
