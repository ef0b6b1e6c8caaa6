// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "lava/types.hpp"

namespace lava::model {

/// Which part of the stack a parameter belongs to. Freezing works per group.
enum class Group { Backbone, Projection, Semantic, Classifier, Ssl };

std::string_view to_string(Group g);

struct Parameter {
  std::string name;
  Group group = Group::Backbone;
  Matrix value;
  Matrix grad;
  bool decay = true;  // biases and magnitudes are excluded from weight decay
  bool buffer = false;  // running statistic: no gradient, never touched by the optimizer
};

/// Ordered, name-addressable collection. Order is the registration order and
/// is what checkpoints and EMA iterate over.
class ParameterSet {
public:
  Parameter& add(std::string name, Group group, Eigen::Index rows, Eigen::Index cols, bool decay);

  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::vector<Parameter>& items() { return items_; }
  const std::vector<Parameter>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  void zero_grad();
  /// Sum of squared gradient entries over all parameters.
  double grad_sq_norm() const;
  /// True when both sets have the same names in the same order with equal shapes.
  bool same_layout(const ParameterSet& other) const;
  /// Total number of scalar parameters.
  Eigen::Index numel() const;

private:
  std::vector<Parameter> items_;
};

}  // namespace lava::model
