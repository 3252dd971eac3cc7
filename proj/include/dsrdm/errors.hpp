#pragma once

#include <stdexcept>
#include <string>

namespace dsrdm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Channel noise at the requested step exceeds what the pre-trained
/// schedule can absorb: the embedded signal cannot be disguised as
/// ordinary diffusion noise.
class MatchInfeasible : public Error {
 public:
  using Error::Error;
};

/// A fading gain fell below the zero-forcing threshold.
class SingularChannel : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class FingerprintMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Wraps a failure inside the end-to-end chain with the stage it came from.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace dsrdm
