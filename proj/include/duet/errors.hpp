#pragma once

#include <stdexcept>
#include <string>

namespace duet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents do not fit the primitive's signature.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A primitive produced NaN or infinity.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Backward requested on a tape that has already been differentiated.
class StaleTapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid user-facing configuration (skeleton files, manifests, run configs).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A 6D rotation whose first column (or orthogonalized second column) vanished.
class DegenerateRotationError : public Error {
 public:
  using Error::Error;
};

}  // namespace duet
