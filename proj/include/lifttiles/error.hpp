#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lifttiles {

/// Machine-readable failure categories. The names double as the gateway's
/// Err frame codes, so keep `to_string` stable.
enum class ErrorCode {
  BadId,
  OutOfRange,
  Overlap,
  Stale,
  TooLarge,
  TooSmall,
  BadFrame,
  Invalid,
  Timeout,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadId: return "BadId";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::Overlap: return "Overlap";
    case ErrorCode::Stale: return "Stale";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::BadFrame: return "BadFrame";
    case ErrorCode::Invalid: return "Invalid";
    case ErrorCode::Timeout: return "Timeout";
  }
  return "Invalid";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lifttiles
