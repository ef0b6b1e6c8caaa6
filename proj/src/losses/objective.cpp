// SPDX-License-Identifier: Apache-2.0
#include "lava/losses/objective.hpp"

#include <map>

#include "lava/errors.hpp"
#include "lava/model/softmax.hpp"

namespace lava::loss {

namespace {

struct Slot {
  std::size_t group = 0;
  Eigen::Index row = 0;
};

struct ViewGroup {
  int height = 0;
  int width = 0;
  std::vector<const views::Image*> images;
  model::StackOutputs out;
  model::ForwardCache cache;
  model::OutputGrads grads;
};

struct Routed {
  std::vector<ViewGroup> groups;
  std::vector<std::vector<Slot>> slots;  // [item][view]
};

Routed route(std::span<const BatchItem> batch, bool student) {
  Routed r;
  r.slots.resize(batch.size());
  std::map<std::pair<int, int>, std::size_t> by_shape;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& vs = student ? batch[i].views.student : batch[i].views.teacher;
    for (const auto& v : vs) {
      const auto key = std::make_pair(v.image.height, v.image.width);
      auto it = by_shape.find(key);
      if (it == by_shape.end()) {
        it = by_shape.emplace(key, r.groups.size()).first;
        r.groups.push_back(ViewGroup{key.first, key.second, {}, {}, {}, {}});
      }
      auto& g = r.groups[it->second];
      r.slots[i].push_back(Slot{it->second, static_cast<Eigen::Index>(g.images.size())});
      g.images.push_back(&v.image);
    }
  }
  return r;
}

Matrix gather(const Routed& r, std::size_t item, Matrix model::StackOutputs::*field,
              std::span<const std::size_t> views) {
  const auto& slots = r.slots[item];
  const Eigen::Index cols = (r.groups[slots.front().group].out.*field).cols();
  Matrix m(static_cast<Eigen::Index>(views.size()), cols);
  for (std::size_t k = 0; k < views.size(); ++k) {
    const Slot s = slots[views[k]];
    m.row(static_cast<Eigen::Index>(k)) = (r.groups[s.group].out.*field).row(s.row);
  }
  return m;
}

void scatter(Routed& r, std::size_t item, Matrix model::OutputGrads::*field, std::span<const std::size_t> views,
             const Matrix& grad, double scale, Eigen::Index cols) {
  for (std::size_t k = 0; k < views.size(); ++k) {
    const Slot s = r.slots[item][views[k]];
    auto& g = r.groups[s.group];
    Matrix& target = g.grads.*field;
    if (target.size() == 0) target = Matrix::Zero(static_cast<Eigen::Index>(g.images.size()), cols);
    target.row(s.row) += scale * grad.row(static_cast<Eigen::Index>(k));
  }
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

ObjectiveResult run(const model::TeacherStudentPair& pair, model::ModelStack* student_for_grad,
                    std::span<const BatchItem> batch, const ObjectiveSettings& s) {
  s.weights.validate();
  if (batch.empty()) throw DomainError("objective over an empty batch");
  if (s.weights.sem > 0.0 && !s.class_embeddings) throw ConfigError("semantic loss needs class embeddings");
  pair.check_layout();
  const bool grad = student_for_grad != nullptr;
  const auto& arch = pair.student.architecture();

  Routed st = route(batch, true);
  Routed te = route(batch, false);
  for (auto& g : st.groups) g.out = pair.student.forward(g.images, grad ? &g.cache : nullptr);
  for (auto& g : te.groups) g.out = pair.teacher.forward(g.images);

  ObjectiveResult result;
  auto& L = result.losses;
  auto feature_mean = [&](const Routed& r) {
    Vector mean = Vector::Zero(arch.feature_dim);
    Eigen::Index rows = 0;
    for (const auto& g : r.groups) {
      mean += g.out.z.colwise().sum().transpose();
      rows += g.out.z.rows();
    }
    return rows > 0 ? Vector(mean / static_cast<double>(rows)) : Vector();
  };
  result.student_feature_mean = feature_mean(st);
  result.teacher_feature_mean = feature_mean(te);
  for (const auto& item : batch) {
    if (item.label) ++L.labelled;
    if (item.pseudo_label) ++L.pseudo_labelled;
  }

  // Teacher ssl logits of the whole batch, item order.
  {
    Eigen::Index rows = 0;
    for (const auto& item : batch) rows += static_cast<Eigen::Index>(item.views.teacher.size());
    result.teacher_ssl_logits.resize(rows, arch.ssl_dim);
    Eigen::Index r = 0;
    for (std::size_t i = 0; i < batch.size(); ++i)
      for (const Slot sl : te.slots[i]) result.teacher_ssl_logits.row(r++) = te.groups[sl.group].out.ssl_logits.row(sl.row);
  }

  const double n_items = static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& item = batch[i];
    const auto& sv = item.views.student;
    const auto& tv = item.views.teacher;
    if (sv.empty()) throw DomainError("batch item without student views");
    const auto all_student = iota(sv.size());
    const auto all_teacher = iota(tv.size());
    std::vector<std::size_t> large_student;
    for (std::size_t k = 0; k < sv.size(); ++k)
      if (sv[k].meta.large) large_student.push_back(k);
    if (large_student.empty()) large_student = all_student;

    CropPredictions pred;
    {
      const Matrix sl = gather(st, i, &model::StackOutputs::logits, all_student);
      for (Eigen::Index r = 0; r < sl.rows(); ++r) pred.student.push_back(model::argmax(Vector(sl.row(r).transpose())));
      if (!tv.empty()) {
        const Matrix tl = gather(te, i, &model::StackOutputs::logits, all_teacher);
        for (Eigen::Index r = 0; r < tl.rows(); ++r) pred.teacher.push_back(model::argmax(Vector(tl.row(r).transpose())));
      }
    }
    result.predictions.push_back(std::move(pred));

    if (s.weights.ssl > 0.0) {
      if (tv.empty()) throw DomainError("self-distillation needs teacher views");
      std::vector<int> sc, tc;
      for (const auto& v : sv) sc.push_back(v.meta.crop_id);
      for (const auto& v : tv) tc.push_back(v.meta.crop_id);
      const auto term = self_distillation_loss_grad(gather(st, i, &model::StackOutputs::ssl_logits, all_student), sc,
                                                    gather(te, i, &model::StackOutputs::ssl_logits, all_teacher), tc,
                                                    s.temps.student, s.temps.teacher, pair.center);
      L.ssl += term.loss / n_items;
      if (grad)
        scatter(st, i, &model::OutputGrads::ssl_logits, all_student, term.grad_logits, s.weights.ssl / n_items,
                arch.ssl_dim);
    }

    if (s.weights.pl > 0.0 && item.pseudo_label) {
      if (tv.empty()) throw DomainError("pseudo-labelling needs teacher views");
      const Matrix tl = gather(te, i, &model::StackOutputs::logits, all_teacher);
      const Matrix tp = model::temperature_softmax_rows(tl, s.temps.teacher);
      std::vector<Distribution> teacher_dists;
      for (Eigen::Index r = 0; r < tp.rows(); ++r) teacher_dists.emplace_back(tp.row(r).transpose());
      const auto term = multicrop_pl_loss_grad(gather(st, i, &model::StackOutputs::logits, all_student),
                                               s.temps.student, teacher_dists, s.strategy);
      const double n_pl = static_cast<double>(L.pseudo_labelled);
      L.pl += term.loss / n_pl;
      if (grad)
        scatter(st, i, &model::OutputGrads::logits, all_student, term.grad_logits, s.weights.pl / n_pl,
                arch.num_classes);
    }

    if (item.label && (s.weights.sem > 0.0 || s.weights.cls > 0.0)) {
      const double n_lab = static_cast<double>(L.labelled);
      const double n_views = static_cast<double>(large_student.size());
      if (s.weights.sem > 0.0) {
        if (!item.negative) throw ContractError("labelled item without a sampled negative class");
        const Matrix& emb = *s.class_embeddings;
        if (*item.label >= emb.rows() || *item.negative >= emb.rows()) throw ContractError("class id outside the embedding rows");
        const Matrix m = gather(st, i, &model::StackOutputs::m, large_student);
        Matrix gm = Matrix::Zero(m.rows(), m.cols());
        double sum = 0.0;
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
          const auto h = semantic_hinge_loss_grad(m.row(r).transpose(), emb.row(*item.label).transpose(),
                                                  emb.row(*item.negative).transpose(), s.eta);
          sum += h.loss;
          gm.row(r) = h.grad_m.transpose();
        }
        L.sem += sum / n_views / n_lab;
        if (grad)
          scatter(st, i, &model::OutputGrads::m, large_student, gm, s.weights.sem / (n_views * n_lab), arch.semantic_dim);
      }
      if (s.weights.cls > 0.0) {
        const auto term = classification_loss_grad(gather(st, i, &model::StackOutputs::logits, large_student),
                                                   *item.label, s.temps.student);
        L.cls += term.loss / n_lab;
        if (grad)
          scatter(st, i, &model::OutputGrads::logits, large_student, term.grad_logits, s.weights.cls / n_lab,
                  arch.num_classes);
      }
    }
  }
  L.total = s.weights.ssl * L.ssl + s.weights.sem * L.sem + s.weights.pl * L.pl + s.weights.cls * L.cls;

  if (grad)
    for (auto& g : st.groups) {
      if (g.grads.m.size() == 0 && g.grads.logits.size() == 0 && g.grads.ssl_logits.size() == 0) continue;
      student_for_grad->backward(g.cache, g.grads, s.trainable);
    }
  return result;
}

}  // namespace

ObjectiveResult evaluate_objective(const model::TeacherStudentPair& pair, std::span<const BatchItem> batch,
                                   const ObjectiveSettings& settings) {
  return run(pair, nullptr, batch, settings);
}

ObjectiveResult objective_with_gradients(model::TeacherStudentPair& pair, std::span<const BatchItem> batch,
                                         const ObjectiveSettings& settings) {
  return run(pair, &pair.student, batch, settings);
}

}  // namespace lava::loss
