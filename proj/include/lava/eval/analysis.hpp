// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace lava::eval {

/// Unique pseudo-label classes over the number of crops.
double disagreement_rate(std::span<const int> pseudo_labels);

struct RankedImage {
  std::size_t image = 0;
  double mean_rate = 0.0;
  std::size_t iterations = 0;
};

/// history[image][iteration] holds that iteration's crop pseudo-labels.
/// Descending by mean rate, ties by image index.
std::vector<RankedImage> rank_by_disagreement(const std::vector<std::vector<std::vector<int>>>& history);

/// One teacher prediction per crop slot, recorded during training.
struct CropRecord {
  int epoch = 0;
  std::size_t image = 0;
  std::string slot;  // e.g. "teacher_large_0", "student_small_3"
  int prediction = 0;
};

struct CurvePoint {
  int epoch = 0;
  std::string slot;
  double accuracy = 0.0;
  double disagreement = 0.0;  // mean per-image rate over the large slots, same for every slot of an epoch
  std::size_t count = 0;
};

/// Per-epoch, per-slot accuracy against the hidden labels (indexed by image).
/// Throws ContractError when a record names an image without a hidden label.
std::vector<CurvePoint> oracle_pseudo_label_accuracy(std::span<const int> hidden_labels,
                                                     std::span<const CropRecord> records);

/// CSV "epoch,crop_slot,accuracy,disagreement".
void write_oracle_csv(std::ostream& out, std::span<const CurvePoint> curves);

}  // namespace lava::eval
