// SPDX-License-Identifier: Apache-2.0
#include "lava/eval/knn.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>

#include "lava/errors.hpp"

namespace lava::eval {

void FeatureBank::validate() const {
  if (static_cast<Eigen::Index>(labels.size()) != vectors.rows() || domains.size() != labels.size())
    throw ContractError("feature bank vectors, labels and domain tags have different lengths");
  if (!vectors.allFinite()) throw DomainError("feature bank contains non-finite entries");
}

FeatureBank& FeatureBank::tag_all(Domain d) {
  if (domains.empty()) domains.assign(labels.size(), d);
  return *this;
}

std::vector<std::size_t> nearest_neighbors(const Vector& query, const FeatureBank& bank, int k) {
  if (bank.size() == 0) throw DomainError("nearest neighbours on an empty bank");
  if (k < 1) throw DomainError("K must be at least 1");
  if (static_cast<std::size_t>(k) > bank.size()) throw DomainError("bank is smaller than K");
  if (query.size() != bank.vectors.cols()) throw ContractError("query dimension does not match the bank");
  const double qn = query.norm();
  if (!(qn > 0.0)) throw NumericError("zero query vector");
  const Vector norms = bank.vectors.rowwise().norm().cwiseMax(1e-12);
  const Vector sims = (bank.vectors * (query / qn)).cwiseQuotient(norms);
  std::vector<std::size_t> order(bank.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = sims[static_cast<Eigen::Index>(a)], sb = sims[static_cast<Eigen::Index>(b)];
    return sa > sb || (sa == sb && a < b);
  });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

int knn_classify(const Vector& query, const FeatureBank& bank, int k) {
  const auto nn = nearest_neighbors(query, bank, k);
  std::map<int, int> votes;
  for (auto i : nn) ++votes[bank.labels[i]];
  int top = 0;
  for (const auto& [label, count] : votes) top = std::max(top, count);
  for (auto i : nn)
    if (votes[bank.labels[i]] == top) return bank.labels[i];
  return bank.labels[nn.front()];
}

CollapseReport collapse_fraction(const Matrix& queries, const FeatureBank& mixed_bank, int k) {
  mixed_bank.validate();
  if (mixed_bank.size() < static_cast<std::size_t>(k)) throw DomainError("bank is smaller than K");
  if (queries.rows() == 0) throw DomainError("no collapse queries");
  CollapseReport r;
  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    auto nn = nearest_neighbors(queries.row(i).transpose(), mixed_bank, k);
    const auto src = std::count_if(nn.begin(), nn.end(), [&](std::size_t j) { return mixed_bank.domains[j] == Domain::Source; });
    r.fractions.push_back(static_cast<double>(src) / k);
    r.neighbors.push_back(std::move(nn));
  }
  r.mean = std::accumulate(r.fractions.begin(), r.fractions.end(), 0.0) / static_cast<double>(r.fractions.size());
  return r;
}

void write_collapse_csv(std::ostream& out, const CollapseReport& report, const FeatureBank& bank) {
  out << "query_id,fraction,neighbor_ids,neighbor_tags\n";
  for (std::size_t i = 0; i < report.fractions.size(); ++i) {
    out << i << ',' << report.fractions[i] << ',';
    for (std::size_t j = 0; j < report.neighbors[i].size(); ++j) out << (j ? ";" : "") << report.neighbors[i][j];
    out << ',';
    for (std::size_t j = 0; j < report.neighbors[i].size(); ++j)
      out << (j ? ";" : "") << (bank.domains[report.neighbors[i][j]] == Domain::Source ? "source" : "target");
    out << '\n';
  }
}

}  // namespace lava::eval
