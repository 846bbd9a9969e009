#pragma once

#include <stdexcept>
#include <string>

namespace bownet {

// Base of every error the library throws. The CLI maps these to exit code 1
// (user error); anything else escaping to main is an internal error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// A BoW cache whose config hash does not match the current artifacts.
class StaleCacheError : public Error {
 public:
  using Error::Error;
};

}  // namespace bownet
