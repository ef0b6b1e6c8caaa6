// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "lava/types.hpp"

namespace lava::model {

/// softmax(logits / tau) with max subtraction.
/// Throws DomainError for tau <= 0 and NumericError for non-finite logits.
Distribution temperature_softmax(std::span<const double> logits, double tau);
Distribution temperature_softmax(const Vector& logits, double tau);

/// Row-wise temperature softmax; every row of the result is a distribution.
Matrix temperature_softmax_rows(const Matrix& logits, double tau);

/// Index of the largest entry; the smallest index wins ties.
int argmax(std::span<const double> v);
int argmax(const Vector& v);

}  // namespace lava::model
