// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "lava/data/dataset.hpp"

namespace lava::data {

/// Ground truth for every item, including unlabelled ones. Analysis only.
class LabelOracle {
public:
  static int true_label(const DatasetManifest& m, std::size_t i) { return m.class_.at(i); }
  static std::optional<int> secondary_label(const DatasetManifest& m, std::size_t i) {
    const int s = m.secondary_.at(i);
    return s < 0 ? std::nullopt : std::optional<int>(s);
  }
  static std::vector<int> hidden_labels(const DatasetManifest& m) { return m.class_; }
};

}  // namespace lava::data
