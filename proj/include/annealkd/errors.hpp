#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include "annealkd/precision.hpp"

ANNEALKD_BEGIN_NAMESPACE

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An operation received operands whose shapes violate its shape rule.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A precondition on a scalar argument failed (temperature <= 0, lambda out
/// of [0,1], label out of range, zero epochs, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared during a forward or backward pass.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::size_t node) : Error(what), node_(node) {}
  std::size_t node() const noexcept { return node_; }

 private:
  std::size_t node_;
};

/// Dataset ingestion failure (missing file, short file, bad label byte).
class DataError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  enum class Kind { Io, BadMagic, VersionMismatch, Truncated, Corrupt, ShapeMismatch };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Experiment configuration error. `line` is 1-based, 0 when not tied to a
/// particular line.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

ANNEALKD_END_NAMESPACE
