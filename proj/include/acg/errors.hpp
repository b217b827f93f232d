#pragma once

#include <stdexcept>
#include <string>

namespace acg {

/// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated a documented precondition (CLI exit code 1).
class ContractError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

class ConfigError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Structurally malformed game command (wrong arity or slot type).
class GrammarError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// File system or format failure (CLI exit code 2).
class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public IoError {
 public:
  using IoError::IoError;
};

/// Non-finite values where finite ones are required (CLI exit code 3).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Internal inconsistency between generated artifacts; signals a bug.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

}  // namespace acg
