#pragma once

#include <stdexcept>
#include <string>

namespace textdeform {

/// Root of the library's exception hierarchy. The CLI maps each subclass to
/// its own exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or degenerate geometry (zero-area polygon, bad point count, NaN).
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape mismatch inside the autodiff graph.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration value, unknown key, failed invariant.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or malformed data file (images, annotations, checkpoints).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or parameter encountered during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace textdeform
