// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace lava::model {

enum class ScheduleKind { Constant, Cosine, WarmupCosine };

std::string_view to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view name);

/// Value schedule over a fixed number of steps.
///
/// WarmupCosine ramps linearly from `warmup_start` to `start` over
/// `warmup_steps`, then follows a half cosine from `start` to `end` over the
/// remaining steps. A teacher-temperature warmup that holds its value
/// afterwards is a WarmupCosine with start == end.
struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::Constant;
  double start = 0.0;
  double end = 0.0;
  std::int64_t total_steps = 1;
  std::int64_t warmup_steps = 0;
  double warmup_start = 0.0;

  static ScheduleSpec constant(double value, std::int64_t total = 1) {
    return {ScheduleKind::Constant, value, value, total, 0, 0.0};
  }
  static ScheduleSpec cosine(double start, double end, std::int64_t total) {
    return {ScheduleKind::Cosine, start, end, total, 0, 0.0};
  }
  static ScheduleSpec warmup_cosine(double warmup_start, double start, double end, std::int64_t total,
                                    std::int64_t warmup) {
    return {ScheduleKind::WarmupCosine, start, end, total, warmup, warmup_start};
  }
};

/// Throws DomainError when step is outside [0, total_steps].
double schedule_value(const ScheduleSpec& spec, std::int64_t step);

/// Same as schedule_value but clamps step into range. Used by training loops
/// whose last optimizer step index equals total_steps - 1.
double schedule_value_clamped(const ScheduleSpec& spec, std::int64_t step);

}  // namespace lava::model
