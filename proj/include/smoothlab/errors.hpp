#ifndef SMOOTHLAB_ERRORS_HPP
#define SMOOTHLAB_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace smoothlab {

enum class ErrorCode {
  DimensionMismatch,
  DegenerateObservationNoise,
  UnknownBenchmark,
  NonFiniteState,
  SingularNoise,
  WeightCollapse,
  UnsupportedTestFunction,
  SingularCovariance,
  EmptyCloud,
  NonConstantAlpha,
  OutOfSupport,
  GridMismatch,
  CflViolation,
  NegativeDensity,
  MassUnderflow,
  ConfigError,
  TooFewSamples,
  PreconditionFailed,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DegenerateObservationNoise: return "DegenerateObservationNoise";
    case ErrorCode::UnknownBenchmark: return "UnknownBenchmark";
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::SingularNoise: return "SingularNoise";
    case ErrorCode::WeightCollapse: return "WeightCollapse";
    case ErrorCode::UnsupportedTestFunction: return "UnsupportedTestFunction";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::NonConstantAlpha: return "NonConstantAlpha";
    case ErrorCode::OutOfSupport: return "OutOfSupport";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::CflViolation: return "CflViolation";
    case ErrorCode::NegativeDensity: return "NegativeDensity";
    case ErrorCode::MassUnderflow: return "MassUnderflow";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::PreconditionFailed: return "PreconditionFailed";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and tests) can branch on the kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Re-raises `e` with a stage prefix, keeping the original code.
[[noreturn]] inline void rethrow_with_context(const Error& e, std::string_view stage) {
  throw Error(e.code(), std::string(stage) + ": " + e.what());
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

// Literal messages: no string is built unless the check fails (hot loops).
inline void require(bool condition, ErrorCode code, const char* message) {
  if (!condition) throw Error(code, message);
}

}  // namespace smoothlab

#endif  // SMOOTHLAB_ERRORS_HPP
