// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "lava/model/checkpoint.hpp"
#include "lava/model/model_stack.hpp"
#include "lava/model/parameters.hpp"

namespace lava::train {

/// Adam with decoupled weight decay. Decay applies to parameters flagged
/// `decay` only.
class AdamW {
public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void reset(const model::ParameterSet& params);
  /// Updates parameters of trainable groups from their gradients.
  void step(model::ParameterSet& params, double lr, double weight_decay, const model::Trainable& trainable);
  std::int64_t steps() const { return t_; }

  void save(model::Checkpoint& ckpt, std::string_view prefix) const;
  /// Restores moments by parameter name; missing entries start at zero.
  void load(const model::Checkpoint& ckpt, std::string_view prefix, const model::ParameterSet& params);

private:
  std::vector<std::string> names_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::int64_t t_ = 0;
};

/// Scales the gradients of trainable groups so their joint norm is at most
/// max_norm. Returns the norm before clipping.
double clip_grad_norm(model::ParameterSet& params, double max_norm, const model::Trainable& trainable);

}  // namespace lava::train
