// SPDX-License-Identifier: Apache-2.0
#include "lava/model/parameters.hpp"

#include "lava/errors.hpp"

namespace lava::model {

std::string_view to_string(Group g) {
  switch (g) {
    case Group::Backbone: return "backbone";
    case Group::Projection: return "projection";
    case Group::Semantic: return "semantic";
    case Group::Classifier: return "classifier";
    case Group::Ssl: return "ssl";
  }
  return "backbone";
}

Parameter& ParameterSet::add(std::string name, Group group, Eigen::Index rows, Eigen::Index cols, bool decay) {
  if (find(name)) throw ContractError("duplicate parameter " + name);
  items_.push_back(Parameter{std::move(name), group, Matrix::Zero(rows, cols), Matrix::Zero(rows, cols), decay});
  return items_.back();
}

Parameter* ParameterSet::find(std::string_view name) {
  for (auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

const Parameter* ParameterSet::find(std::string_view name) const {
  for (const auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

Parameter& ParameterSet::at(std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw ContractError("no parameter named " + std::string(name));
}

const Parameter& ParameterSet::at(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  throw ContractError("no parameter named " + std::string(name));
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) p.grad.setZero();
}

double ParameterSet::grad_sq_norm() const {
  double s = 0.0;
  for (const auto& p : items_) s += p.grad.squaredNorm();
  return s;
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (items_.size() != other.items_.size()) return false;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& a = items_[i];
    const auto& b = other.items_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) return false;
  }
  return true;
}

Eigen::Index ParameterSet::numel() const {
  Eigen::Index n = 0;
  for (const auto& p : items_) n += p.value.size();
  return n;
}

}  // namespace lava::model
