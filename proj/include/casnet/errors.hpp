#pragma once

#include <stdexcept>
#include <string>

namespace casnet {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument value (out of range index, too small size, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Tensor or matrix dimensions that do not fit an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Config file or override problems (unknown keys, unparsable values).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage needs an artifact that an earlier stage did not produce.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

// A loss term became non-finite during training.
class DivergenceError : public Error {
 public:
  DivergenceError(std::string term, long step, const std::string& what)
      : Error(what), term_(std::move(term)), step_(step) {}

  const std::string& term() const noexcept { return term_; }
  long step() const noexcept { return step_; }

 private:
  std::string term_;
  long step_;
};

// Failure inside a pipeline stage; the message is prefixed with the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "': " + what), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace casnet
