#pragma once

#include <stdexcept>
#include <string>

namespace setident {

/// Violated precondition of an operation (bad argument values, wrong call order).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Shape or length mismatch between operands.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Input data that cannot be used (empty splits, unknown items, missing vectors).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed text input; carries the offending line number when known.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : DataError(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Binary or text file with an unexpected header/magic.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// Invalid combination of configuration values.
class ConfigError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// NaN or Inf produced while finite-value checks are enabled.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace setident
