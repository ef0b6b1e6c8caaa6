// SPDX-License-Identifier: Apache-2.0
#include "lava/train/optimizer.hpp"

#include <cmath>
#include <string>

#include "lava/errors.hpp"

namespace lava::train {

void AdamW::reset(const model::ParameterSet& params) {
  names_.clear();
  m_.clear();
  v_.clear();
  for (const auto& p : params.items()) {
    names_.push_back(p.name);
    m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }
  t_ = 0;
}

void AdamW::step(model::ParameterSet& params, double lr, double weight_decay, const model::Trainable& trainable) {
  if (names_.size() != params.size()) reset(params);
  ++t_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.items()[i];
    if (p.name != names_[i]) throw ContractError("optimizer state does not match parameter '" + p.name + "'");
    if (p.buffer || !trainable.contains(p.group)) continue;
    m_[i] = beta1 * m_[i] + (1.0 - beta1) * p.grad;
    v_[i] = beta2 * v_[i] + (1.0 - beta2) * p.grad.cwiseAbs2();
    if (p.decay && weight_decay > 0.0) p.value *= 1.0 - lr * weight_decay;
    p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
  }
}

void AdamW::save(model::Checkpoint& ckpt, std::string_view prefix) const {
  const std::string pre(prefix);
  for (std::size_t i = 0; i < names_.size(); ++i) {
    ckpt.put_matrix(pre + "m/" + names_[i], m_[i]);
    ckpt.put_matrix(pre + "v/" + names_[i], v_[i]);
  }
  ckpt.put_ints(pre + "t", {t_});
}

void AdamW::load(const model::Checkpoint& ckpt, std::string_view prefix, const model::ParameterSet& params) {
  reset(params);
  const std::string pre(prefix);
  for (std::size_t i = 0; i < names_.size(); ++i) {
    const auto* m = ckpt.find(pre + "m/" + names_[i]);
    const auto* v = ckpt.find(pre + "v/" + names_[i]);
    if (!m || !v) continue;
    Matrix mm = ckpt.matrix(pre + "m/" + names_[i]);
    Matrix vv = ckpt.matrix(pre + "v/" + names_[i]);
    if (mm.rows() != m_[i].rows() || mm.cols() != m_[i].cols()) continue;
    m_[i] = std::move(mm);
    v_[i] = std::move(vv);
  }
  if (ckpt.contains(pre + "t")) t_ = ckpt.ints(pre + "t").at(0);
}

double clip_grad_norm(model::ParameterSet& params, double max_norm, const model::Trainable& trainable) {
  double sq = 0.0;
  for (const auto& p : params.items())
    if (trainable.contains(p.group)) sq += p.grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / (norm + 1e-6);
    for (auto& p : params.items())
      if (trainable.contains(p.group)) p.grad *= scale;
  }
  return norm;
}

}  // namespace lava::train
