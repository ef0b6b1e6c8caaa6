// SPDX-License-Identifier: Apache-2.0
#include "lava/model/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lava/errors.hpp"

namespace lava::model {

std::string_view to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::Constant: return "constant";
    case ScheduleKind::Cosine: return "cosine";
    case ScheduleKind::WarmupCosine: return "warmup_cosine";
  }
  return "constant";
}

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "constant") return ScheduleKind::Constant;
  if (name == "cosine") return ScheduleKind::Cosine;
  if (name == "warmup_cosine") return ScheduleKind::WarmupCosine;
  throw ConfigError("unknown schedule kind '" + std::string(name) + "'");
}

namespace {

double half_cosine(double start, double end, double progress) {
  return end + (start - end) * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

}  // namespace

double schedule_value(const ScheduleSpec& spec, std::int64_t step) {
  if (spec.total_steps < 0 || spec.warmup_steps < 0) throw ConfigError("negative schedule length");
  if (step < 0 || step > spec.total_steps) throw DomainError("schedule step out of range");
  switch (spec.kind) {
    case ScheduleKind::Constant:
      return spec.start;
    case ScheduleKind::Cosine:
      if (spec.total_steps == 0) return spec.end;
      return half_cosine(spec.start, spec.end, static_cast<double>(step) / static_cast<double>(spec.total_steps));
    case ScheduleKind::WarmupCosine: {
      const std::int64_t warmup = std::min(spec.warmup_steps, spec.total_steps);
      if (step < warmup) {
        const double t = static_cast<double>(step) / static_cast<double>(warmup);
        return spec.warmup_start + (spec.start - spec.warmup_start) * t;
      }
      const std::int64_t span = spec.total_steps - warmup;
      if (span == 0) return spec.end;
      return half_cosine(spec.start, spec.end, static_cast<double>(step - warmup) / static_cast<double>(span));
    }
  }
  return spec.start;
}

double schedule_value_clamped(const ScheduleSpec& spec, std::int64_t step) {
  return schedule_value(spec, std::clamp<std::int64_t>(step, 0, std::max<std::int64_t>(spec.total_steps, 0)));
}

}  // namespace lava::model
