// SPDX-License-Identifier: Apache-2.0
#include "lava/eval/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <set>

#include "lava/errors.hpp"
#include "lava/rng.hpp"

namespace lava::eval {

void Episode::validate() const {
  if (ways() < 2) throw ContractError("an episode needs at least two ways");
  if (support.size() != support_labels.size() || query.size() != query_labels.size())
    throw ContractError("episode index and label lists differ in length");
  const std::set<int> have(support_labels.begin(), support_labels.end());
  for (int q : query_labels)
    if (!have.contains(q)) throw ContractError("query class without support examples");
}

Episode EpisodeSampler::sample(std::uint64_t seed) const {
  if (min_ways < 2 || max_ways < min_ways || min_shots < 1 || max_shots < min_shots || queries_per_class < 1)
    throw ConfigError("invalid episode sampler bounds");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < pool_labels.size(); ++i) by_class[pool_labels[i]].push_back(i);
  std::vector<int> eligible;
  for (const auto& [c, items] : by_class)
    if (static_cast<int>(items.size()) >= queries_per_class + 1) eligible.push_back(c);
  if (eligible.size() < 2) throw DomainError("episode sampler exhausted: fewer than two classes have enough items");

  Rng rng(seed);
  const int ways = std::min(rng.between(min_ways, max_ways), static_cast<int>(eligible.size()));
  rng.shuffle(eligible.begin(), eligible.end());
  eligible.resize(static_cast<std::size_t>(ways));
  std::sort(eligible.begin(), eligible.end());

  Episode ep;
  ep.seed = seed;
  ep.classes = eligible;
  for (int local = 0; local < ways; ++local) {
    auto items = by_class[eligible[static_cast<std::size_t>(local)]];
    rng.shuffle(items.begin(), items.end());
    const int cap = static_cast<int>(items.size()) - queries_per_class;
    const int shots = std::min(rng.between(min_shots, max_shots), cap);
    for (int s = 0; s < shots; ++s) {
      ep.support.push_back(items[static_cast<std::size_t>(s)]);
      ep.support_labels.push_back(local);
    }
    for (int q = 0; q < queries_per_class; ++q) {
      ep.query.push_back(items[static_cast<std::size_t>(shots + q)]);
      ep.query_labels.push_back(local);
    }
  }
  return ep;
}

MeanCi mean_confidence(std::span<const double> values, double multiplier) {
  if (values.size() < 2) throw DomainError("a confidence interval needs at least two values");
  const double n = static_cast<double>(values.size());
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); })) return {values.front(), 0.0};
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  return {mean, multiplier * sd / std::sqrt(n)};
}

double macro_precision(std::span<const int> truth, std::span<const int> predicted, int num_classes) {
  if (truth.size() != predicted.size()) throw ContractError("precision inputs differ in length");
  if (truth.empty()) throw DomainError("precision of an empty prediction set");
  std::vector<std::size_t> tp(static_cast<std::size_t>(num_classes)), pred(static_cast<std::size_t>(num_classes));
  std::vector<bool> seen(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]), p = static_cast<std::size_t>(predicted[i]);
    if (t >= tp.size() || p >= tp.size()) throw ContractError("class id out of range");
    seen[t] = seen[p] = true;
    ++pred[p];
    tp[p] += t == p;
  }
  double acc = 0.0;
  int classes = 0;
  for (std::size_t c = 0; c < tp.size(); ++c) {
    if (!seen[c]) continue;
    ++classes;
    if (pred[c]) acc += static_cast<double>(tp[c]) / static_cast<double>(pred[c]);
  }
  return acc / classes;
}

EpisodeReport run_episodes(const EpisodeRunner& runner, const EpisodeSampler& sampler, int n_episodes,
                           std::uint64_t global_seed, double ci_multiplier) {
  if (n_episodes < 2) throw DomainError("need at least two episodes");
  EpisodeReport r;
  std::vector<double> acc, prec, sem;
  for (int i = 0; i < n_episodes; ++i) {
    const Episode ep = sampler.sample(derive_seed({global_seed, static_cast<std::uint64_t>(i)}));
    ep.validate();
    const EpisodeOutcome o = runner(ep);
    r.episodes.push_back({static_cast<std::size_t>(i), ep.ways(), ep.support.size(), o});
    acc.push_back(o.accuracy);
    prec.push_back(o.macro_precision);
    if (o.semantic_accuracy >= 0.0) sem.push_back(o.semantic_accuracy);
  }
  const auto mc = mean_confidence(acc, ci_multiplier);
  r.mean = mc.mean;
  r.ci95 = mc.ci;
  r.mean_precision = std::accumulate(prec.begin(), prec.end(), 0.0) / static_cast<double>(prec.size());
  if (!sem.empty()) r.mean_semantic = std::accumulate(sem.begin(), sem.end(), 0.0) / static_cast<double>(sem.size());
  return r;
}

void write_episode_csv(std::ostream& out, const EpisodeReport& report) {
  out << "episode_id,ways,total_shots,accuracy,precision,semantic_accuracy\n";
  for (const auto& e : report.episodes)
    out << e.episode_id << ',' << e.ways << ',' << e.total_shots << ',' << e.outcome.accuracy << ','
        << e.outcome.macro_precision << ',' << e.outcome.semantic_accuracy << '\n';
}

}  // namespace lava::eval
