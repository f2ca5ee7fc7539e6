#pragma once

#include <stdexcept>
#include <string>

namespace nanolens {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes between a layer and its input, or between two operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A numeric argument (depth, layer index, filter index, label) outside its valid range.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Image bytes that could not be decoded.
class DecodeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed, corrupt or incompatible checkpoint data.
class CheckpointError : public Error {
 public:
  enum class Reason { kIo, kMagic, kVersion, kTruncated, kCrc, kLayerKind, kLayout };

  CheckpointError(Reason reason, const std::string& what) : Error(what), reason_(reason) {}

  Reason reason() const noexcept { return reason_; }

 private:
  Reason reason_;
};

}  // namespace nanolens
