#pragma once

#include <stdexcept>
#include <string>

namespace cflow {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for the named op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input outside an op's mathematical domain (log of a non-positive value, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A forward pass produced inf or NaN.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// An invertible layer was asked to invert a numerically singular map.
class SingularityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace cflow
