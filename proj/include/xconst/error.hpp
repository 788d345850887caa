#pragma once

#include <stdexcept>
#include <string>

namespace xconst {

// Error categories double as process exit codes for the CLI.
enum class ErrorKind {
  kInternal = 1,
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

/// Invalid configuration: bad sizes, unknown strategy names, unknown JSON keys.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

/// Missing, malformed or inconsistent data (datasets, checkpoints, run directories).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
  DataError(ErrorKind kind, const std::string& what) : Error(kind, what) {}
};

class CheckpointError : public DataError {
 public:
  explicit CheckpointError(const std::string& what) : DataError("checkpoint: " + what) {}
};

class EmptyInputError : public DataError {
 public:
  explicit EmptyInputError(const std::string& what) : DataError("empty input: " + what) {}
};

class EmptyPivotError : public DataError {
 public:
  explicit EmptyPivotError(const std::string& what) : DataError("empty pivot: " + what) {}
};

/// NaN/Inf in a forward value or loss.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

/// Violated API precondition (tensor shapes, sequence lengths, token ids).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorKind::kInternal, what) {}
};

class ShapeError : public ContractError {
 public:
  explicit ShapeError(const std::string& what) : ContractError("shape: " + what) {}
};

}  // namespace xconst
