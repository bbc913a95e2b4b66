#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xcloud {

enum class ErrorCode {
  // catalog / backends
  DuplicateRoute,
  InvalidDescriptor,
  UnknownRoute,
  UnknownBackend,
  WrongBackendKind,
  EmptyInput,
  EmptyDataset,
  EmptyIndex,
  InvalidArgument,
  // metrics
  DegenerateVariance,
  LengthMismatch,
  TooFewSamples,
  InvalidPercentile,
  // persistence
  UnknownUser,
  FieldTooLong,
  DuplicateUsername,
  DuplicateUserkey,
  NotFound,
  StorageFailure,
  // gateway
  Unauthorized,
  BadRequest,
  MethodNotAllowed,
  UpstreamFetchFailed,
  NoHealthyWorker,
  // loadgen
  TargetUnreachable,
  InvalidPlan,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DuplicateRoute: return "DuplicateRoute";
    case ErrorCode::InvalidDescriptor: return "InvalidDescriptor";
    case ErrorCode::UnknownRoute: return "UnknownRoute";
    case ErrorCode::UnknownBackend: return "UnknownBackend";
    case ErrorCode::WrongBackendKind: return "WrongBackendKind";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::InvalidPercentile: return "InvalidPercentile";
    case ErrorCode::UnknownUser: return "UnknownUser";
    case ErrorCode::FieldTooLong: return "FieldTooLong";
    case ErrorCode::DuplicateUsername: return "DuplicateUsername";
    case ErrorCode::DuplicateUserkey: return "DuplicateUserkey";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::StorageFailure: return "StorageFailure";
    case ErrorCode::Unauthorized: return "Unauthorized";
    case ErrorCode::BadRequest: return "BadRequest";
    case ErrorCode::MethodNotAllowed: return "MethodNotAllowed";
    case ErrorCode::UpstreamFetchFailed: return "UpstreamFetchFailed";
    case ErrorCode::NoHealthyWorker: return "NoHealthyWorker";
    case ErrorCode::TargetUnreachable: return "TargetUnreachable";
    case ErrorCode::InvalidPlan: return "InvalidPlan";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, std::string(to_string(code)) + ": " + what);
}

}  // namespace xcloud
