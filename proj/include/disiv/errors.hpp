#pragma once

#include <stdexcept>
#include <string>

namespace disiv {

/// Base of every error thrown by the library. `exit_code()` is the process
/// status the CLI reports for this category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Operand shapes disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller violated a precondition (non-scalar loss root, bad labels, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class ParseError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Checksum or fingerprint mismatch between files that must agree.
class IntegrityError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

/// NaN/Inf produced by a forward pass or a diverging loss.
class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 5; }
};

}  // namespace disiv
