#ifndef FLUNET_ERROR_HPP_
#define FLUNET_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace flunet {

// Base type for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / rank mismatch.
class DimError : public Error {
 public:
  explicit DimError(const std::string& msg) : Error(msg) {}
};

// Invalid argument that is not a shape problem (bad permutation, bad rate, ...).
class ArgError : public Error {
 public:
  explicit ArgError(const std::string& msg) : Error(msg) {}
};

// Inconsistent module configuration (indivisible window, bad head count, ...).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// An op produced a non-finite value. Surfaced immediately, never propagated.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Malformed or degenerate input data (empty annotation list, zero variance, ...).
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

// Filesystem or serialization failure.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace flunet

#endif  // FLUNET_ERROR_HPP_
