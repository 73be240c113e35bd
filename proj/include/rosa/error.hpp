#pragma once

#include <stdexcept>
#include <string>

namespace rosa {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value or argument violates a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A numerical procedure produced a non-finite value or could not proceed.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Configuration file is malformed, incomplete or has unknown keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage failed; the message is prefixed with the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// Surrogate validation R^2 fell below the configured gate.
class ValidationGateError : public Error {
 public:
  using Error::Error;
};

}  // namespace rosa
