// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "lava/model/model_stack.hpp"

namespace lava::model {

/// Online student and its EMA teacher with the self-distillation centering
/// state. Both stacks always share one architecture.
struct TeacherStudentPair {
  ModelStack student;
  ModelStack teacher;
  double momentum = 0.996;
  std::int64_t step = 0;
  Vector center;

  /// Teacher starts as an exact copy of the student; center starts at zero.
  static TeacherStudentPair from_student(ModelStack student, double momentum);

  /// Throws ContractError if the two stacks differ in layout.
  void check_layout() const;
};

/// teacher <- gamma * teacher + (1 - gamma) * student for every parameter.
void ema_update(TeacherStudentPair& pair, double gamma);

/// center <- momentum * center + (1 - momentum) * mean_rows(teacher_ssl_logits).
void update_center(TeacherStudentPair& pair, const Matrix& teacher_ssl_logits, double center_momentum);

/// Default centering momentum.
inline constexpr double kCenterMomentum = 0.9;

}  // namespace lava::model
