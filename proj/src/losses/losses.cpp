// SPDX-License-Identifier: Apache-2.0
#include "lava/losses/losses.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "lava/errors.hpp"
#include "lava/model/softmax.hpp"

namespace lava::loss {

std::string_view to_string(AggregationStrategy s) {
  switch (s) {
    case AggregationStrategy::PairwiseAverageSoft: return "pair-wise average soft";
    case AggregationStrategy::PairwiseAverageHard: return "pair-wise average hard";
    case AggregationStrategy::SingleAverageSoft: return "single average soft";
    case AggregationStrategy::SingleAverageHard: return "single average hard";
    case AggregationStrategy::SingleMajorityHard: return "single majority hard";
  }
  return "pair-wise average soft";
}

AggregationStrategy parse_strategy(std::string_view name) {
  std::string key;
  for (char c : name) {
    if (c == '-' || c == ' ' || c == '_') continue;
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  for (auto s : kAllStrategies) {
    std::string canon;
    for (char c : to_string(s))
      if (c != '-' && c != ' ') canon.push_back(c);
    if (canon == key) return s;
  }
  throw ConfigError("unknown aggregation strategy '" + std::string(name) + "'");
}

void LossWeights::validate() const {
  for (double w : {ssl, sem, pl, cls})
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be finite and non-negative");
  if (ssl == 0.0 && sem == 0.0 && pl == 0.0 && cls == 0.0) throw ConfigError("all loss weights are zero");
}

namespace {

double safe_norm(const Vector& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("cosine of a zero or non-finite vector");
  return n;
}

void check_eta(double eta) {
  if (!(eta > 0.0)) throw DomainError("hinge margin must be > 0");
}

bool is_hard(AggregationStrategy s) {
  return s == AggregationStrategy::PairwiseAverageHard || s == AggregationStrategy::SingleAverageHard ||
         s == AggregationStrategy::SingleMajorityHard;
}

Distribution one_hot(Eigen::Index size, int k) {
  Distribution d = Distribution::Zero(size);
  d[k] = 1.0;
  return d;
}

// Accumulates scale * d/dlogits CE(target, softmax(logits / tau)) into out,
// honoring the log floor (clamped components contribute no gradient).
void accumulate_ce_grad(const Distribution& target, const RowVector& p, double tau, double scale,
                        Eigen::Ref<RowVector> out) {
  double mass = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k)
    if (p[k] >= kLogFloor) mass += target[k];
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    const double direct = p[k] >= kLogFloor ? target[k] : 0.0;
    out[k] += scale * (mass * p[k] - direct) / tau;
  }
}

double ce_row(const Distribution& target, const RowVector& p) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k)
    if (target[k] != 0.0) s -= target[k] * std::log(std::max(p[k], kLogFloor));
  return s;
}

void check_nonempty(std::size_t n, const char* what) {
  if (n == 0) throw DomainError(std::string("empty ") + what);
}

}  // namespace

HingeResult semantic_hinge_loss_grad(const Vector& m, const Vector& omega_true, const Vector& omega_false, double eta) {
  check_eta(eta);
  if (m.size() != omega_true.size() || m.size() != omega_false.size())
    throw ContractError("semantic vector dimension mismatch");
  const double nm = safe_norm(m);
  const double nt = safe_norm(omega_true);
  const double nf = safe_norm(omega_false);
  const Vector mu = m / nm;
  const Vector tu = omega_true / nt;
  const Vector fu = omega_false / nf;
  const double cos_true = mu.dot(tu);
  const double cos_false = mu.dot(fu);
  HingeResult r;
  r.loss = std::max(0.0, eta - cos_true + cos_false);
  r.grad_m = Vector::Zero(m.size());
  if (r.loss > 0.0) {
    // d cos(m, w) / dm = (w_unit - cos * m_unit) / |m|
    r.grad_m = ((fu - cos_false * mu) - (tu - cos_true * mu)) / nm;
  }
  return r;
}

double semantic_hinge_loss(const Vector& m, const Vector& omega_true, const Vector& omega_false, double eta) {
  return semantic_hinge_loss_grad(m, omega_true, omega_false, eta).loss;
}

double semantic_hinge_loss_batch(const Matrix& m, std::span<const int> truth, std::span<const int> negative,
                                 const Matrix& embeddings, double eta) {
  if (m.rows() == 0) throw DomainError("hinge loss over an empty batch");
  if (truth.size() != static_cast<std::size_t>(m.rows()) || negative.size() != truth.size())
    throw ContractError("hinge batch label count mismatch");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    sum += semantic_hinge_loss(m.row(i).transpose(), embeddings.row(truth[static_cast<std::size_t>(i)]).transpose(),
                               embeddings.row(negative[static_cast<std::size_t>(i)]).transpose(), eta);
  return sum / static_cast<double>(m.rows());
}

double cross_entropy(const Distribution& p_t, const Distribution& p_s) {
  if (p_t.size() != p_s.size()) throw ContractError("cross entropy dimension mismatch");
  return ce_row(p_t, p_s.transpose());
}

AggregatedTarget aggregate_teacher(std::span<const Distribution> teacher, AggregationStrategy strategy) {
  check_nonempty(teacher.size(), "teacher crop set");
  switch (strategy) {
    case AggregationStrategy::PairwiseAverageSoft:
    case AggregationStrategy::PairwiseAverageHard:
      return Passthrough{};
    case AggregationStrategy::SingleAverageSoft:
    case AggregationStrategy::SingleAverageHard: {
      Distribution mean = teacher.front();
      for (std::size_t i = 1; i < teacher.size(); ++i) mean += teacher[i];
      if (teacher.size() > 1) mean /= static_cast<double>(teacher.size());
      if (strategy == AggregationStrategy::SingleAverageSoft) return mean;
      return model::argmax(mean);
    }
    case AggregationStrategy::SingleMajorityHard: {
      std::map<int, int> votes;
      for (const auto& d : teacher) ++votes[model::argmax(d)];
      int best = votes.begin()->first;
      for (const auto& [cls, count] : votes)
        if (count > votes[best]) best = cls;  // map order gives the smallest index on ties
      return best;
    }
  }
  return Passthrough{};
}

namespace {

// Per-student-crop targets with weights such that
// loss = sum_j sum_(target, w) w * CE(target, p_s_j) / n_students.
struct TargetSet {
  std::vector<Distribution> targets;
  double weight = 1.0;
};

TargetSet build_targets(std::span<const Distribution> teacher, AggregationStrategy strategy) {
  TargetSet set;
  const auto agg = aggregate_teacher(teacher, strategy);
  if (std::holds_alternative<Passthrough>(agg)) {
    for (const auto& d : teacher)
      set.targets.push_back(is_hard(strategy) ? one_hot(d.size(), model::argmax(d)) : d);
    set.weight = 1.0 / static_cast<double>(teacher.size());
  } else if (const auto* soft = std::get_if<Distribution>(&agg)) {
    set.targets.push_back(*soft);
  } else {
    set.targets.push_back(one_hot(teacher.front().size(), std::get<int>(agg)));
  }
  return set;
}

}  // namespace

double multicrop_pl_loss(std::span<const Distribution> student, std::span<const Distribution> teacher,
                         AggregationStrategy strategy) {
  check_nonempty(student.size(), "student crop set");
  check_nonempty(teacher.size(), "teacher crop set");
  for (const auto& t : teacher)
    if (t.size() != student.front().size()) throw ContractError("teacher/student class count mismatch");
  const TargetSet set = build_targets(teacher, strategy);
  double sum = 0.0;
  // Pair-wise strategies walk every (student, teacher) pair.
  for (const auto& s : student)
    for (const auto& t : set.targets) sum += set.weight * cross_entropy(t, s);
  return sum / static_cast<double>(student.size());
}

LogitLoss multicrop_pl_loss_grad(const Matrix& student_logits, double tau_s, std::span<const Distribution> teacher,
                                 AggregationStrategy strategy) {
  check_nonempty(static_cast<std::size_t>(student_logits.rows()), "student crop set");
  check_nonempty(teacher.size(), "teacher crop set");
  for (const auto& t : teacher)
    if (t.size() != student_logits.cols()) throw ContractError("teacher/student class count mismatch");
  const Matrix p = model::temperature_softmax_rows(student_logits, tau_s);
  const TargetSet set = build_targets(teacher, strategy);
  const double n = static_cast<double>(student_logits.rows());
  LogitLoss out{0.0, Matrix::Zero(student_logits.rows(), student_logits.cols())};
  for (Eigen::Index j = 0; j < p.rows(); ++j)
    for (const auto& t : set.targets) {
      out.loss += set.weight * ce_row(t, p.row(j)) / n;
      accumulate_ce_grad(t, p.row(j), tau_s, set.weight / n, out.grad_logits.row(j));
    }
  return out;
}

LogitLoss self_distillation_loss_grad(const Matrix& student_logits, std::span<const int> student_crops,
                                      const Matrix& teacher_logits, std::span<const int> teacher_crops, double tau_s,
                                      double tau_t, const Vector& center) {
  if (student_crops.size() != static_cast<std::size_t>(student_logits.rows()) ||
      teacher_crops.size() != static_cast<std::size_t>(teacher_logits.rows()))
    throw ContractError("crop id count mismatch");
  if (teacher_logits.cols() != student_logits.cols() || center.size() != teacher_logits.cols())
    throw ContractError("self-distillation dimension mismatch");
  Matrix centered = teacher_logits;
  centered.rowwise() -= center.transpose();
  const Matrix pt = model::temperature_softmax_rows(centered, tau_t);
  const Matrix ps = model::temperature_softmax_rows(student_logits, tau_s);
  std::size_t pairs = 0;
  for (int tc : teacher_crops)
    for (int sc : student_crops)
      if (tc != sc) ++pairs;
  if (pairs == 0) throw DomainError("self-distillation has no valid view pairs");
  const double scale = 1.0 / static_cast<double>(pairs);
  LogitLoss out{0.0, Matrix::Zero(student_logits.rows(), student_logits.cols())};
  for (Eigen::Index i = 0; i < pt.rows(); ++i) {
    const Distribution target = pt.row(i).transpose();
    for (Eigen::Index j = 0; j < ps.rows(); ++j) {
      if (teacher_crops[static_cast<std::size_t>(i)] == student_crops[static_cast<std::size_t>(j)]) continue;
      out.loss += scale * ce_row(target, ps.row(j));
      accumulate_ce_grad(target, ps.row(j), tau_s, scale, out.grad_logits.row(j));
    }
  }
  return out;
}

double self_distillation_loss(const Matrix& student_logits, std::span<const int> student_crops,
                              const Matrix& teacher_logits, std::span<const int> teacher_crops, double tau_s,
                              double tau_t, const Vector& center) {
  return self_distillation_loss_grad(student_logits, student_crops, teacher_logits, teacher_crops, tau_s, tau_t, center)
      .loss;
}

LogitLoss classification_loss_grad(const Matrix& logits, int label, double tau) {
  if (logits.rows() == 0) throw DomainError("classification loss over no rows");
  if (label < 0 || label >= logits.cols()) throw ContractError("label outside the classifier range");
  const Matrix p = model::temperature_softmax_rows(logits, tau);
  const Distribution target = one_hot(logits.cols(), label);
  const double n = static_cast<double>(logits.rows());
  LogitLoss out{0.0, Matrix::Zero(logits.rows(), logits.cols())};
  for (Eigen::Index j = 0; j < p.rows(); ++j) {
    out.loss += ce_row(target, p.row(j)) / n;
    accumulate_ce_grad(target, p.row(j), tau, 1.0 / n, out.grad_logits.row(j));
  }
  return out;
}

}  // namespace lava::loss
