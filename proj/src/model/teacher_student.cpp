// SPDX-License-Identifier: Apache-2.0
#include "lava/model/teacher_student.hpp"

#include "lava/errors.hpp"

namespace lava::model {

TeacherStudentPair TeacherStudentPair::from_student(ModelStack student, double momentum) {
  TeacherStudentPair pair;
  pair.teacher = student;
  pair.teacher.parameters().zero_grad();
  pair.student = std::move(student);
  pair.momentum = momentum;
  pair.center = Vector::Zero(pair.student.architecture().ssl_dim);
  return pair;
}

void TeacherStudentPair::check_layout() const {
  if (!(student.architecture() == teacher.architecture()) ||
      !student.parameters().same_layout(teacher.parameters()))
    throw ContractError("student and teacher architectures differ");
}

void ema_update(TeacherStudentPair& pair, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw DomainError("EMA momentum must lie in [0, 1]");
  pair.check_layout();
  auto& t = pair.teacher.parameters().items();
  const auto& s = pair.student.parameters().items();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (gamma == 1.0 || t[i].buffer) continue;
    if (gamma == 0.0) {
      t[i].value = s[i].value;
      continue;
    }
    t[i].value = gamma * t[i].value + (1.0 - gamma) * s[i].value;
  }
  pair.momentum = gamma;
}

void update_center(TeacherStudentPair& pair, const Matrix& teacher_ssl_logits, double center_momentum) {
  if (teacher_ssl_logits.rows() == 0) throw DomainError("center update on an empty batch");
  if (!(center_momentum >= 0.0 && center_momentum < 1.0)) throw DomainError("center momentum must lie in [0, 1)");
  if (teacher_ssl_logits.cols() != pair.center.size()) throw ContractError("center dimension mismatch");
  const Vector batch_mean = teacher_ssl_logits.colwise().mean().transpose();
  pair.center = center_momentum * pair.center + (1.0 - center_momentum) * batch_mean;
}

}  // namespace lava::model
