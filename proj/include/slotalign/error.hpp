#pragma once

#include <stdexcept>
#include <string>

namespace slotalign {

enum class ErrorKind {
  kInvalidTimestamp,
  kInvalidIndex,
  kInvalidGrid,
  kConfig,
  kRequest,
  kParse,
  kIo,
  kMix,
  kNumeric,
  kCapacity,
  kEmptyLoss,
  kInfeasible,
  kMetric,
  kDivergence,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidTimestamp: return "invalid-timestamp";
    case ErrorKind::kInvalidIndex: return "invalid-index";
    case ErrorKind::kInvalidGrid: return "invalid-grid";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kRequest: return "request";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kMix: return "mix";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kCapacity: return "capacity";
    case ErrorKind::kEmptyLoss: return "empty-loss";
    case ErrorKind::kInfeasible: return "infeasible-alignment";
    case ErrorKind::kMetric: return "metric";
    case ErrorKind::kDivergence: return "divergence";
  }
  return "unknown";
}

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace slotalign
