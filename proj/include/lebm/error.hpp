#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lebm {

enum class ErrorCode {
  InvalidShape,
  NonFiniteInput,
  DetachedTensor,
  InvalidInput,
  InvalidBatch,
  InvalidLabel,
  NonFiniteGradient,
  ChainDiverged,
  InsufficientLabels,
  ParseError,
  UnsupportedDimension,
  NonDeterministicLoss,
  UnknownKind,
  ConfigError,
  CheckpointVersion,
  Io,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class ChainDivergedError : public Error {
 public:
  ChainDivergedError(std::size_t chain, std::int64_t iteration)
      : Error(ErrorCode::ChainDiverged,
              "chain " + std::to_string(chain) + " diverged at iteration " +
                  std::to_string(iteration)),
        chain_(chain),
        iteration_(iteration) {}

  std::size_t chain() const noexcept { return chain_; }
  std::int64_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t chain_;
  std::int64_t iteration_;
};

/// Parse failure with a 1-based line number; column is 1-based, 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& what)
      : Error(ErrorCode::ParseError, "line " + std::to_string(line) +
                                         (column ? ", column " + std::to_string(column) : "") +
                                         ": " + what),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::DetachedTensor: return "DetachedTensor";
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::InvalidBatch: return "InvalidBatch";
    case ErrorCode::InvalidLabel: return "InvalidLabel";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::ChainDiverged: return "ChainDiverged";
    case ErrorCode::InsufficientLabels: return "InsufficientLabels";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnsupportedDimension: return "UnsupportedDimension";
    case ErrorCode::NonDeterministicLoss: return "NonDeterministicLoss";
    case ErrorCode::UnknownKind: return "UnknownKind";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::CheckpointVersion: return "CheckpointVersion";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace lebm
