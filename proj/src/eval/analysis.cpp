// SPDX-License-Identifier: Apache-2.0
#include "lava/eval/analysis.hpp"

#include <algorithm>
#include <map>
#include <ostream>
#include <set>
#include <utility>

#include "lava/errors.hpp"

namespace lava::eval {

double disagreement_rate(std::span<const int> pseudo_labels) {
  if (pseudo_labels.empty()) throw DomainError("disagreement rate of an empty crop sequence");
  const std::set<int> unique(pseudo_labels.begin(), pseudo_labels.end());
  return static_cast<double>(unique.size()) / static_cast<double>(pseudo_labels.size());
}

std::vector<RankedImage> rank_by_disagreement(const std::vector<std::vector<std::vector<int>>>& history) {
  if (history.empty()) throw DomainError("no disagreement history");
  std::vector<RankedImage> out;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (history[i].empty()) throw DomainError("image " + std::to_string(i) + " has no recorded iterations");
    double acc = 0.0;
    for (const auto& it : history[i]) acc += disagreement_rate(it);
    out.push_back({i, acc / static_cast<double>(history[i].size()), history[i].size()});
  }
  std::stable_sort(out.begin(), out.end(), [](const RankedImage& a, const RankedImage& b) { return a.mean_rate > b.mean_rate; });
  return out;
}

std::vector<CurvePoint> oracle_pseudo_label_accuracy(std::span<const int> hidden_labels,
                                                     std::span<const CropRecord> records) {
  std::map<std::pair<int, std::string>, std::pair<std::size_t, std::size_t>> hits;  // (correct, total)
  std::map<int, std::map<std::size_t, std::vector<int>>> large;                       // epoch -> image -> labels
  for (const auto& r : records) {
    if (r.image >= hidden_labels.size())
      throw ContractError("crop record for image " + std::to_string(r.image) + " has no hidden label");
    auto& h = hits[{r.epoch, r.slot}];
    h.first += r.prediction == hidden_labels[r.image];
    ++h.second;
    if (r.slot.find("large") != std::string::npos) large[r.epoch][r.image].push_back(r.prediction);
  }
  std::map<int, double> disagreement;
  for (const auto& [epoch, images] : large) {
    double acc = 0.0;
    for (const auto& [img, labels] : images) acc += disagreement_rate(labels);
    disagreement[epoch] = acc / static_cast<double>(images.size());
  }
  std::vector<CurvePoint> out;
  for (const auto& [key, h] : hits) {
    const auto d = disagreement.find(key.first);
    out.push_back({key.first, key.second, static_cast<double>(h.first) / static_cast<double>(h.second),
                   d == disagreement.end() ? 0.0 : d->second, h.second});
  }
  return out;
}

void write_oracle_csv(std::ostream& out, std::span<const CurvePoint> curves) {
  out << "epoch,crop_slot,accuracy,disagreement\n";
  for (const auto& c : curves) out << c.epoch << ',' << c.slot << ',' << c.accuracy << ',' << c.disagreement << '\n';
}

}  // namespace lava::eval
