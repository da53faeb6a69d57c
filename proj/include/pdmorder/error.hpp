#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pdmorder {

enum class ErrorKind {
  parse_error,
  inconsistent_dimension,
  too_few_samples,
  degenerate_shape,
  not_aligned,
  order_out_of_range,
  singular_system,
  dimension_mismatch,
  zero_variance,
  invalid_argument,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parse_error: return "ParseError";
    case ErrorKind::inconsistent_dimension: return "InconsistentDimension";
    case ErrorKind::too_few_samples: return "TooFewSamples";
    case ErrorKind::degenerate_shape: return "DegenerateShape";
    case ErrorKind::not_aligned: return "NotAligned";
    case ErrorKind::order_out_of_range: return "OrderOutOfRange";
    case ErrorKind::singular_system: return "SingularSystem";
    case ErrorKind::dimension_mismatch: return "DimensionMismatch";
    case ErrorKind::zero_variance: return "ZeroVariance";
    case ErrorKind::invalid_argument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Single exception type for the library; `kind()` distinguishes the failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// Numerical failures are distinguished from bad input by the CLI.
  bool is_numerical() const noexcept { return kind_ == ErrorKind::singular_system; }

 private:
  ErrorKind kind_;
};

}  // namespace pdmorder
