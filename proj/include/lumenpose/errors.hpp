#pragma once

#include <stdexcept>
#include <string>

namespace lumenpose {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid user-facing configuration (CLI maps this to exit code 2).
struct ConfigError : Error {
  using Error::Error;
};

// A documented precondition of an operation was violated by the caller.
struct PreconditionError : Error {
  using Error::Error;
};

// Tensor shape mismatch; message names both shapes.
struct ShapeError : Error {
  using Error::Error;
};

struct InvalidRotationError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct TrainingDivergedError : Error {
  using Error::Error;
};

}  // namespace lumenpose
