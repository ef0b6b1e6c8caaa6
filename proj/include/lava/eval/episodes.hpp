// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

namespace lava::eval {

/// Indices into an item pool, with episode-local class ids 0..ways-1.
struct Episode {
  std::vector<std::size_t> support;
  std::vector<int> support_labels;
  std::vector<std::size_t> query;
  std::vector<int> query_labels;
  std::vector<int> classes;  // pool class id of each episode-local class
  std::uint64_t seed = 0;

  int ways() const { return static_cast<int>(classes.size()); }
  /// Throws ContractError unless ways >= 2 and every query class has support.
  void validate() const;
};

/// Variable-way, imbalanced-shot sampler over a labelled pool.
struct EpisodeSampler {
  std::vector<int> pool_labels;  // class id per pool item
  int min_ways = 2;
  int max_ways = 5;
  int min_shots = 1;
  int max_shots = 10;
  int queries_per_class = 10;

  /// Throws DomainError when fewer than two classes can host an episode.
  Episode sample(std::uint64_t seed) const;
};

struct EpisodeOutcome {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double semantic_accuracy = -1.0;  // negative when not measured
};

struct EpisodeRecord {
  std::size_t episode_id = 0;
  int ways = 0;
  std::size_t total_shots = 0;
  EpisodeOutcome outcome;
};

struct EpisodeReport {
  std::vector<EpisodeRecord> episodes;
  double mean = 0.0;
  double ci95 = 0.0;
  double mean_precision = 0.0;
  double mean_semantic = -1.0;
};

inline constexpr double kCiMultiplier = 1.96;

struct MeanCi {
  double mean = 0.0;
  double ci = 0.0;
};

/// Mean and multiplier * sample std / sqrt(n). Throws DomainError for n < 2.
MeanCi mean_confidence(std::span<const double> values, double multiplier = kCiMultiplier);

/// Per-class TP / (TP + FP), averaged over classes that were predicted at
/// least once or appear in the truth; an unpredicted class scores 0.
double macro_precision(std::span<const int> truth, std::span<const int> predicted, int num_classes);

using EpisodeRunner = std::function<EpisodeOutcome(const Episode&)>;

/// Episode i uses seed derive_seed(global_seed, i); results are ordered by i.
EpisodeReport run_episodes(const EpisodeRunner& runner, const EpisodeSampler& sampler, int n_episodes,
                           std::uint64_t global_seed, double ci_multiplier = kCiMultiplier);

/// CSV "episode_id,ways,total_shots,accuracy,precision,semantic_accuracy".
void write_episode_csv(std::ostream& out, const EpisodeReport& report);

}  // namespace lava::eval
