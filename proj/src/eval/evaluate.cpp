// SPDX-License-Identifier: Apache-2.0
#include "lava/eval/evaluate.hpp"

#include <algorithm>

#include "lava/errors.hpp"
#include "lava/model/softmax.hpp"

namespace lava::eval {

model::StackOutputs embed_all(const model::ModelStack& stack, std::span<const views::Image* const> images,
                              std::size_t batch_size) {
  if (images.empty()) throw EvaluationError("nothing to embed");
  const auto& a = stack.architecture();
  const auto n = static_cast<Eigen::Index>(images.size());
  model::StackOutputs all{Matrix(n, a.feature_dim), Matrix(n, a.projection_dim), Matrix(n, a.semantic_dim),
                          Matrix(n, a.num_classes), Matrix(n, a.ssl_dim)};
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, images.size() - start);
    const auto out = stack.forward(images.subspan(start, len));
    const auto s = static_cast<Eigen::Index>(start), l = static_cast<Eigen::Index>(len);
    all.z.middleRows(s, l) = out.z;
    all.q.middleRows(s, l) = out.q;
    all.m.middleRows(s, l) = out.m;
    all.logits.middleRows(s, l) = out.logits;
    all.ssl_logits.middleRows(s, l) = out.ssl_logits;
  }
  return all;
}

double accuracy(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.empty()) throw EvaluationError("accuracy of an empty set");
  if (truth.size() != predicted.size()) throw ContractError("accuracy inputs differ in length");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += truth[i] == predicted[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

std::vector<int> softmax_predictions(const Matrix& logits) {
  std::vector<int> out;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) out.push_back(model::argmax(Vector(logits.row(r).transpose())));
  return out;
}

std::vector<int> semantic_predictions(const Matrix& m, const Matrix& class_embeddings) {
  const Vector en = class_embeddings.rowwise().norm().cwiseMax(1e-12);
  std::vector<int> out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mn = m.row(r).norm();
    if (!(mn > 0.0)) throw NumericError("zero semantic projection");
    const Vector scores = (class_embeddings * m.row(r).transpose()).cwiseQuotient(en) / mn;
    out.push_back(model::argmax(scores));
  }
  return out;
}

Accuracies evaluate(const model::ModelStack& stack, const EvalInputs& in) {
  if (in.images.empty()) throw EvaluationError("evaluation set is empty");
  if (in.images.size() != in.labels.size()) throw ContractError("evaluation images and labels differ in length");
  if (in.class_embeddings)
    for (int l : in.labels)
      if (l < 0 || l >= in.class_embeddings->rows())
        throw EvaluationError("label " + std::to_string(l) + " has no class embedding");
  const auto out = embed_all(stack, in.images);
  Accuracies acc;
  acc.count = in.images.size();
  acc.softmax = accuracy(in.labels, softmax_predictions(out.logits));
  if (in.knn_bank) {
    std::vector<int> pred;
    for (Eigen::Index r = 0; r < out.z.rows(); ++r) pred.push_back(knn_classify(out.z.row(r).transpose(), *in.knn_bank, in.k));
    acc.knn = accuracy(in.labels, pred);
  }
  if (in.class_embeddings) {
    acc.semantic = accuracy(in.labels, semantic_predictions(out.m, *in.class_embeddings));
    acc.has_semantic = true;
  }
  return acc;
}

}  // namespace lava::eval
