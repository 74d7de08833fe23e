#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace odefilter {

enum class ErrorKind {
  kInvalidArgument,
  kNumericalOverflow,
  kSingularInnovation,
  kConditioning,
  kConfiguration,
  kUnsupportedInit,
  kWeightCollapse,
  kDegenerateSample,
  kNoFixedPoint,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kNumericalOverflow: return "numerical-overflow";
    case ErrorKind::kSingularInnovation: return "singular-innovation";
    case ErrorKind::kConditioning: return "conditioning";
    case ErrorKind::kConfiguration: return "configuration";
    case ErrorKind::kUnsupportedInit: return "unsupported-init";
    case ErrorKind::kWeightCollapse: return "weight-collapse";
    case ErrorKind::kDegenerateSample: return "degenerate-sample";
    case ErrorKind::kNoFixedPoint: return "no-fixed-point";
  }
  return "unknown";
}

/// Every failure raised by the library. `step()` is set when the error
/// surfaced inside a time-stepping loop.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what, std::optional<std::size_t> step = std::nullopt)
      : std::runtime_error(format(kind, what, step)), kind_(kind), step_(step), detail_(what) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }
  [[nodiscard]] std::optional<std::size_t> step() const noexcept { return step_; }
  [[nodiscard]] const std::string& detail() const noexcept { return detail_; }

  [[nodiscard]] Error at_step(std::size_t step) const { return Error(kind_, detail_, step); }

 private:
  static std::string format(ErrorKind kind, const std::string& what,
                            std::optional<std::size_t> step) {
    std::string msg = std::string(to_string(kind)) + ": " + what;
    if (step) {
      msg += " (step " + std::to_string(*step) + ")";
    }
    return msg;
  }

  ErrorKind kind_;
  std::optional<std::size_t> step_;
  std::string detail_;
};

}  // namespace odefilter
