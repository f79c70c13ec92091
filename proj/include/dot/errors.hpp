#ifndef DOT_ERRORS_HPP
#define DOT_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace dot {

enum class ErrorCode {
  NonPositiveDepth,
  OutOfBounds,
  ImageTooSmall,
  TooFewValidPoints,
  SingularSystem,
  TrackingLost,
  DegenerateVariance,
  NotPositiveDefinite,
  DimensionMismatch,
  DecodeError,
  NoValidProjections,
  UnclassifiedTrack,
  SpecInvalid,
  DegenerateGeometry,
  LengthMismatch,
  DivisionByZero,
  ConfigError,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::TooFewValidPoints: return "TooFewValidPoints";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::TrackingLost: return "TrackingLost";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::NoValidProjections: return "NoValidProjections";
    case ErrorCode::UnclassifiedTrack: return "UnclassifiedTrack";
    case ErrorCode::SpecInvalid: return "SpecInvalid";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::DivisionByZero: return "DivisionByZero";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers can branch on the condition without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dot

#endif  // DOT_ERRORS_HPP
