// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "lava/types.hpp"

namespace lava::loss {

/// How the teacher's per-crop predictions become student targets.
enum class AggregationStrategy {
  PairwiseAverageSoft,
  PairwiseAverageHard,
  SingleAverageSoft,
  SingleAverageHard,
  SingleMajorityHard,
};

inline constexpr AggregationStrategy kAllStrategies[] = {
    AggregationStrategy::PairwiseAverageSoft, AggregationStrategy::PairwiseAverageHard,
    AggregationStrategy::SingleAverageSoft, AggregationStrategy::SingleAverageHard,
    AggregationStrategy::SingleMajorityHard};

/// Human-readable name, e.g. "pair-wise average soft".
std::string_view to_string(AggregationStrategy s);
/// Accepts the human-readable names and their snake_case forms.
AggregationStrategy parse_strategy(std::string_view name);

struct LossWeights {
  double ssl = 0.0;
  double sem = 1.0;
  double pl = 1.0;
  double cls = 0.0;

  /// Throws ConfigError for negative/non-finite weights or all zeros.
  void validate() const;
};

/// Probabilities below this are clamped before the log.
inline constexpr double kLogFloor = 1e-12;

/// max(0, eta - cos(m, omega_true) + cos(m, omega_false)).
double semantic_hinge_loss(const Vector& m, const Vector& omega_true, const Vector& omega_false, double eta);

struct HingeResult {
  double loss = 0.0;
  Vector grad_m;
};
HingeResult semantic_hinge_loss_grad(const Vector& m, const Vector& omega_true, const Vector& omega_false, double eta);

/// Mean hinge over rows of `m`; `truth[i]` and `negative[i]` index rows of `embeddings`.
double semantic_hinge_loss_batch(const Matrix& m, std::span<const int> truth, std::span<const int> negative,
                                 const Matrix& embeddings, double eta);

/// -sum_k p_t[k] log max(p_s[k], kLogFloor).
double cross_entropy(const Distribution& p_t, const Distribution& p_s);

/// Tag for strategies that keep every teacher crop as its own target.
struct Passthrough {
  bool operator==(const Passthrough&) const = default;
};
using AggregatedTarget = std::variant<Distribution, int, Passthrough>;

/// Soft average -> Distribution, hard variants -> class id, pair-wise -> Passthrough.
AggregatedTarget aggregate_teacher(std::span<const Distribution> teacher, AggregationStrategy strategy);

/// Multi-crop pseudo-label loss for one image over student and teacher crops.
double multicrop_pl_loss(std::span<const Distribution> student, std::span<const Distribution> teacher,
                         AggregationStrategy strategy);

/// Loss value plus its gradient w.r.t. a matrix of student logits (one row per crop).
struct LogitLoss {
  double loss = 0.0;
  Matrix grad_logits;
};

/// Same loss as multicrop_pl_loss with p_s = softmax(student_logits / tau_s);
/// also returns the gradient w.r.t. the logits. Teacher targets are constants.
LogitLoss multicrop_pl_loss_grad(const Matrix& student_logits, double tau_s, std::span<const Distribution> teacher,
                                 AggregationStrategy strategy);

/// Self-distillation: mean over (teacher view, student view) pairs with
/// different crop ids of CE(softmax((t - center)/tau_t), softmax(s/tau_s)).
double self_distillation_loss(const Matrix& student_logits, std::span<const int> student_crops,
                              const Matrix& teacher_logits, std::span<const int> teacher_crops, double tau_s,
                              double tau_t, const Vector& center);
LogitLoss self_distillation_loss_grad(const Matrix& student_logits, std::span<const int> student_crops,
                                      const Matrix& teacher_logits, std::span<const int> teacher_crops, double tau_s,
                                      double tau_t, const Vector& center);

/// Mean over rows of CE(one_hot(label), softmax(logits / tau)).
LogitLoss classification_loss_grad(const Matrix& logits, int label, double tau);

}  // namespace lava::loss
