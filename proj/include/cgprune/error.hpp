#pragma once

#include <stdexcept>
#include <string>

namespace cgprune {

// Process exit codes used by the command-line tool. Every exception type
// below maps onto exactly one of them.
enum class ExitCode : int {
  ok = 0,
  usage = 2,
  integrity = 3,
  numeric = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept = 0;
};

// Bad arguments, invalid configuration, mismatched inputs.
class UsageError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::usage; }
};

// Input data violates a structural invariant (dangling edge, ragged vectors,
// stale or tampered artifacts).
class IntegrityError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::integrity; }
};

class ParseError : public IntegrityError {
 public:
  using IntegrityError::IntegrityError;
};

class FormatError : public IntegrityError {
 public:
  using IntegrityError::IntegrityError;
};

class DegenerateDatasetError : public IntegrityError {
 public:
  using IntegrityError::IntegrityError;
};

class StalenessError : public IntegrityError {
 public:
  using IntegrityError::IntegrityError;
};

class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::numeric; }
};

}  // namespace cgprune
