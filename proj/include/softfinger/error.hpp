#pragma once

#include <stdexcept>
#include <string>

namespace softfinger {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Geometry or mesh construction rejected the input.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Linear solve failed (singular or indefinite system).
class SolverError : public Error {
 public:
  using Error::Error;
};

/// Configuration parse or schema violation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Optimizer or campaign runtime failure.
class RuntimeError : public Error {
 public:
  using Error::Error;
};

}  // namespace softfinger
