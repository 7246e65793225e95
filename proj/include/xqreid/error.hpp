#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xqreid {

enum class ErrorCode {
  Validation,
  FileMissing,
  FormatError,
  IoError,
  DimMismatch,
  NonFiniteValue,
  SchemaError,
  CrossFileDimMismatch,
  NoSharedIdentities,
  SingleIdentity,
  EmptyInput,
  NotPositiveDefinite,
  EigenFailure,
  AlreadyNormalized,
  TooFewIdentities,
  ProbeLabelAbsent,
  RankOutOfRange,
  BadParams,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Validation: return "Validation";
    case ErrorCode::FileMissing: return "FileMissing";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::CrossFileDimMismatch: return "CrossFileDimMismatch";
    case ErrorCode::NoSharedIdentities: return "NoSharedIdentities";
    case ErrorCode::SingleIdentity: return "SingleIdentity";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::EigenFailure: return "EigenFailure";
    case ErrorCode::AlreadyNormalized: return "AlreadyNormalized";
    case ErrorCode::TooFewIdentities: return "TooFewIdentities";
    case ErrorCode::ProbeLabelAbsent: return "ProbeLabelAbsent";
    case ErrorCode::RankOutOfRange: return "RankOutOfRange";
    case ErrorCode::BadParams: return "BadParams";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a code.
/// what() reads "<Code>: <detail>" so callers that only print the message
/// still see which check failed.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) {
  throw Error(code, detail);
}

inline void require(bool condition, ErrorCode code, const std::string& detail) {
  if (!condition) fail(code, detail);
}

}  // namespace xqreid
