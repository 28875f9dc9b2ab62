#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ildm {

/// Error categories shared by every module and surfaced by the CLI envelope.
enum class ErrorCategory { Config, Io, Contract, Numeric };

std::string_view to_string(ErrorCategory category) noexcept;

/// Base exception. `key` names the offending config key, file path or
/// parameter when one exists.
class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string message, std::string key = {});

  ErrorCategory category() const noexcept { return category_; }
  const std::string& key() const noexcept { return key_; }
  const std::string& message() const noexcept { return message_; }

  /// One-line JSON envelope: {"category":...,"message":...,"key":...}
  std::string envelope() const;

 private:
  ErrorCategory category_;
  std::string message_;
  std::string key_;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string message, std::string key = {})
      : Error(ErrorCategory::Config, std::move(message), std::move(key)) {}
};

class IoError : public Error {
 public:
  IoError(std::string message, std::string path = {})
      : Error(ErrorCategory::Io, std::move(message), std::move(path)) {}
};

class ContractError : public Error {
 public:
  ContractError(std::string message, std::string key = {})
      : Error(ErrorCategory::Contract, std::move(message), std::move(key)) {}
};

class NumericError : public Error {
 public:
  NumericError(std::string message, std::string key = {})
      : Error(ErrorCategory::Numeric, std::move(message), std::move(key)) {}
};

/// Raised for inputs that make an operation undefined (e.g. a constant depth field).
class DegenerateInputError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// KL(p||q) with q = 0 where p > 0.
class AbsoluteContinuityError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace ildm
