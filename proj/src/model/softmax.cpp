// SPDX-License-Identifier: Apache-2.0
#include "lava/model/softmax.hpp"

#include <algorithm>
#include <cmath>

#include "lava/errors.hpp"

namespace lava::model {

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("softmax temperature must be > 0");
}

}  // namespace

Distribution temperature_softmax(std::span<const double> logits, double tau) {
  check_tau(tau);
  if (logits.empty()) throw DomainError("softmax of an empty vector");
  double max_scaled = -INFINITY;
  for (double l : logits) {
    if (!std::isfinite(l)) throw NumericError("non-finite logit");
    max_scaled = std::max(max_scaled, l / tau);
  }
  Distribution p(static_cast<Eigen::Index>(logits.size()));
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[static_cast<Eigen::Index>(k)] = std::exp(logits[k] / tau - max_scaled);
    sum += p[static_cast<Eigen::Index>(k)];
  }
  return p / sum;
}

Distribution temperature_softmax(const Vector& logits, double tau) {
  return temperature_softmax(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())), tau);
}

Matrix temperature_softmax_rows(const Matrix& logits, double tau) {
  check_tau(tau);
  if (!logits.allFinite()) throw NumericError("non-finite logit");
  Matrix scaled = logits / tau;
  for (Eigen::Index r = 0; r < scaled.rows(); ++r) {
    auto row = scaled.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return scaled;
}

int argmax(std::span<const double> v) {
  int best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  return best;
}

int argmax(const Vector& v) {
  return argmax(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

}  // namespace lava::model
