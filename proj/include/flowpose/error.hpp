#pragma once

#include <stdexcept>
#include <string>

namespace flowpose {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input outside an operation's mathematical domain, or a non-finite result.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or inconsistent file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A model or parameter file violates a structural invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace flowpose
