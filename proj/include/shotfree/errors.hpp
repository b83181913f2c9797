#pragma once

#include <stdexcept>
#include <string>

namespace shotfree {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shape or dimension mismatch. Message names the offending shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Numerically degenerate input, e.g. a row norm below epsilon before
/// normalization. Signals a collapsed embedding rather than clamping.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// An operation produced a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// API contract violation (wrong mode, non-scalar loss, missing tape).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Episode/few-shot protocol violation (label outside episode, too few
/// classes or samples for the requested sampling).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// A verification oracle could not run (e.g. non-deterministic objective).
class OracleError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration; message lists all problems found.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File I/O or parse failure; message carries the path and line context.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace shotfree
