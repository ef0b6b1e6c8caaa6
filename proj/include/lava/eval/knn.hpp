// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "lava/types.hpp"

namespace lava::eval {

enum class Domain : unsigned char { Source, Target };

/// Representations z with class ids and domain tags, one row per item.
struct FeatureBank {
  Matrix vectors;
  std::vector<int> labels;
  std::vector<Domain> domains;

  std::size_t size() const { return labels.size(); }
  /// Throws ContractError on misaligned lengths, DomainError on NaN rows.
  void validate() const;
  /// Fills domains with `d` when empty.
  FeatureBank& tag_all(Domain d);
};

/// Indices of the K most cosine-similar bank rows, most similar first; equal
/// similarities keep the lower index first.
std::vector<std::size_t> nearest_neighbors(const Vector& query, const FeatureBank& bank, int k);

/// Majority vote over the K nearest by cosine. Tied classes are resolved by
/// the tied class whose member ranks nearest.
int knn_classify(const Vector& query, const FeatureBank& bank, int k);

struct CollapseReport {
  double mean = 0.0;
  std::vector<double> fractions;                    // per query
  std::vector<std::vector<std::size_t>> neighbors;  // per query, K bank indices
};

/// Mean over queries of the source-tagged share among the K nearest.
CollapseReport collapse_fraction(const Matrix& queries, const FeatureBank& mixed_bank, int k = 10);

/// CSV "query_id,fraction,neighbor_ids,neighbor_tags" with ';'-joined lists.
void write_collapse_csv(std::ostream& out, const CollapseReport& report, const FeatureBank& bank);

}  // namespace lava::eval
