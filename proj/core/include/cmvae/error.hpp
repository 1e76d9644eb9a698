#pragma once

#include <stdexcept>
#include <string>

namespace cmvae {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform. The message names both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed computation graph (foreign node, ordering violation).
class GraphError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or precondition violation on a domain value.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Operation not defined for the given model family.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration or run description.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or corrupt file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace cmvae
