// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "lava/losses/losses.hpp"
#include "lava/model/teacher_student.hpp"
#include "lava/views/view_pipeline.hpp"

namespace lava::loss {

/// One image of a training batch with its generated views.
struct BatchItem {
  std::size_t index = 0;          // sample index; batches are accumulated in this order
  views::ViewSet views;
  std::optional<int> label;       // class id, present only for labelled items
  std::optional<int> negative;    // sampled false class for the hinge term
  bool pseudo_label = false;      // contributes to the multi-crop pseudo-label term
};

struct Temperatures {
  double student = 0.1;
  double teacher = 0.04;
};

struct ObjectiveSettings {
  LossWeights weights;
  AggregationStrategy strategy = AggregationStrategy::PairwiseAverageSoft;
  double eta = 0.4;
  Temperatures temps;
  /// Unit class embeddings, row i for class id i. Required when weights.sem > 0.
  const Matrix* class_embeddings = nullptr;
  model::Trainable trainable;
};

/// Raw (unweighted) terms and the weighted total.
struct LossBreakdown {
  double ssl = 0.0;
  double sem = 0.0;
  double pl = 0.0;
  double cls = 0.0;
  double total = 0.0;
  std::size_t labelled = 0;
  std::size_t pseudo_labelled = 0;
};

/// Argmax predictions per crop, for pseudo-label analysis.
struct CropPredictions {
  std::vector<int> student;  // per student view (large first)
  std::vector<int> teacher;  // per teacher view (large first)
};

struct ObjectiveResult {
  LossBreakdown losses;
  Matrix teacher_ssl_logits;  // every teacher view of the batch; feeds the center update
  std::vector<CropPredictions> predictions;
  Vector student_feature_mean;  // mean z over every student view
  Vector teacher_feature_mean;  // mean z over every teacher view; empty without teacher views
};

/// Total objective w_ssl*L_ssl + w_sem*L_sem + w_pl*L_pl + w_cls*L_cls.
/// Terms whose weight is zero are not evaluated. Labelled terms are skipped
/// when the batch has no labelled items.
ObjectiveResult evaluate_objective(const model::TeacherStudentPair& pair, std::span<const BatchItem> batch,
                                   const ObjectiveSettings& settings);

/// Same as evaluate_objective and additionally accumulates student gradients.
/// The teacher is only ever read.
ObjectiveResult objective_with_gradients(model::TeacherStudentPair& pair, std::span<const BatchItem> batch,
                                         const ObjectiveSettings& settings);

}  // namespace lava::loss
