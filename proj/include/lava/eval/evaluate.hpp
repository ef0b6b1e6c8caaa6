// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "lava/eval/knn.hpp"
#include "lava/model/model_stack.hpp"

namespace lava::eval {

/// Batched forward over any number of same-shaped images.
model::StackOutputs embed_all(const model::ModelStack& stack, std::span<const views::Image* const> images,
                              std::size_t batch_size = 64);

struct Accuracies {
  double softmax = 0.0;
  double knn = 0.0;
  double semantic = 0.0;
  bool has_semantic = false;
  std::size_t count = 0;
};

/// Fraction of equal entries. Throws EvaluationError on empty input.
double accuracy(std::span<const int> truth, std::span<const int> predicted);

/// Row-wise argmax of logits, and nearest class embedding by cosine.
std::vector<int> softmax_predictions(const Matrix& logits);
std::vector<int> semantic_predictions(const Matrix& m, const Matrix& class_embeddings);

struct EvalInputs {
  std::span<const views::Image* const> images;
  std::span<const int> labels;
  const FeatureBank* knn_bank = nullptr;         // z of the reference set
  const Matrix* class_embeddings = nullptr;      // row per class id; skips semantic accuracy when null
  int k = 20;
};

/// Softmax, KNN and semantic accuracy of `stack` (normally the teacher).
/// Throws EvaluationError for an empty set or a label without an embedding row.
Accuracies evaluate(const model::ModelStack& stack, const EvalInputs& in);

}  // namespace lava::eval
