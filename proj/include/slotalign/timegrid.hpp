#pragma once

#include <cstdint>
#include <string>

#include "slotalign/error.hpp"

namespace slotalign {

using Millis = std::int64_t;
using TimeIndex = std::int32_t;

inline std::int32_t num_classes_for(Millis step_ms, Millis max_duration_ms) {
  if (step_ms <= 0 || max_duration_ms <= 0) {
    throw Error(ErrorKind::kInvalidGrid,
                "step and max duration must be positive (step=" +
                    std::to_string(step_ms) +
                    ", max=" + std::to_string(max_duration_ms) + ")");
  }
  return static_cast<std::int32_t>((max_duration_ms + step_ms - 1) / step_ms);
}

/// Discretization contract between milliseconds and timestamp classes.
/// Class k covers [k*step, (k+1)*step); timestamps at or past the last class
/// are clamped into it.
class TimeGrid {
 public:
  TimeGrid() : TimeGrid(80, 300000) {}
  TimeGrid(Millis step_ms, Millis max_duration_ms)
      : step_ms_(step_ms),
        max_duration_ms_(max_duration_ms),
        num_classes_(num_classes_for(step_ms, max_duration_ms)) {}

  Millis step_ms() const { return step_ms_; }
  Millis max_duration_ms() const { return max_duration_ms_; }
  std::int32_t num_classes() const { return num_classes_; }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

 private:
  Millis step_ms_;
  Millis max_duration_ms_;
  std::int32_t num_classes_;
};

inline TimeIndex discretize(Millis t_ms, const TimeGrid& grid) {
  if (t_ms < 0) {
    throw Error(ErrorKind::kInvalidTimestamp,
                "negative timestamp " + std::to_string(t_ms) + " ms");
  }
  const Millis idx = t_ms / grid.step_ms();
  const Millis last = grid.num_classes() - 1;
  return static_cast<TimeIndex>(idx < last ? idx : last);
}

inline Millis to_milliseconds(TimeIndex idx, const TimeGrid& grid) {
  if (idx < 0 || idx >= grid.num_classes()) {
    throw Error(ErrorKind::kInvalidIndex,
                "timestamp index " + std::to_string(idx) + " outside [0, " +
                    std::to_string(grid.num_classes()) + ")");
  }
  return static_cast<Millis>(idx) * grid.step_ms();
}

}  // namespace slotalign
