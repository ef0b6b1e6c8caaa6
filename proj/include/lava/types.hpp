// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

namespace lava {

/// Row-major so that one row is one sample and rows are contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// A probability vector over classes.
using Distribution = Vector;

}  // namespace lava
