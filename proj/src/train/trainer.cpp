// SPDX-License-Identifier: Apache-2.0
#include "lava/train/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "lava/errors.hpp"
#include "lava/model/schedule.hpp"
#include "lava/rng.hpp"
#include "lava/semantics/embedding_table.hpp"

namespace lava::train {

namespace {

enum : std::uint64_t { kOrder = 1, kLabelledOrder = 2, kViews = 3, kNegative = 4, kLabelledViews = 5 };

constexpr double kFeatureMeanMomentum = 0.9;

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  Rng rng(seed);
  rng.shuffle(v.begin(), v.end());
  return v;
}

void record(std::vector<eval::CropRecord>& out, int epoch, std::size_t image, const loss::BatchItem& item,
            const loss::CropPredictions& pred) {
  auto emit = [&](const std::vector<views::View>& vs, const std::vector<int>& p, const char* who) {
    int large = 0, small = 0;
    for (std::size_t k = 0; k < vs.size() && k < p.size(); ++k) {
      const bool is_large = vs[k].meta.large;
      const std::string slot = std::string(who) + (is_large ? "_large_" : "_small_") + std::to_string(is_large ? large++ : small++);
      out.push_back({epoch, image, slot, p[k]});
    }
  };
  emit(item.views.teacher, pred.teacher, "teacher");
  emit(item.views.student, pred.student, "student");
}

}  // namespace

std::int64_t steps_per_epoch(const TrainData& data, const TrainSettings& s) {
  if (!data.unlabelled.empty()) {
    if (s.batch_size < 1) throw ConfigError("batch_size must be at least 1");
    return static_cast<std::int64_t>((data.unlabelled.size() + static_cast<std::size_t>(s.batch_size) - 1) /
                                     static_cast<std::size_t>(s.batch_size));
  }
  if (data.labelled.empty()) throw DataError("no training images");
  if (s.labelled_batch < 1) throw ConfigError("labelled_batch must be at least 1 without unlabelled data");
  return static_cast<std::int64_t>((data.labelled.size() + static_cast<std::size_t>(s.labelled_batch) - 1) /
                                   static_cast<std::size_t>(s.labelled_batch));
}

void train(TrainState& state, const TrainData& data, const TrainSettings& s, const TrainHooks& hooks) {
  if (s.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (data.labelled.size() != data.labels.size()) throw ContractError("labelled images and labels differ in length");
  if (!data.unlabelled_ids.empty() && data.unlabelled_ids.size() != data.unlabelled.size())
    throw ContractError("unlabelled ids and images differ in length");
  s.crops.validate();
  if (s.epochs == 0 || state.epoch >= s.epochs) return;
  const bool use_labelled = !data.labelled.empty() && (s.objective.weights.sem > 0.0 || s.objective.weights.cls > 0.0 ||
                                                        data.unlabelled.empty());
  if (use_labelled && s.objective.weights.sem > 0.0 && data.num_classes < 2)
    throw ConfigError("semantic loss needs at least two classes");

  const std::int64_t spe = steps_per_epoch(data, s);
  const std::int64_t total = spe * s.epochs;
  const auto lr_s = s.warmup_epochs > 0
                        ? model::ScheduleSpec::warmup_cosine(0.0, s.lr, s.lr_min, total, spe * s.warmup_epochs)
                        : model::ScheduleSpec::cosine(s.lr, s.lr_min, total);
  const auto wd_s = model::ScheduleSpec::cosine(s.weight_decay_start, s.weight_decay_end, total);
  const auto mom_s = model::ScheduleSpec::cosine(s.momentum_start, s.momentum_end, total);
  const auto tt_s = model::ScheduleSpec::warmup_cosine(s.teacher_temp_warmup_start, s.teacher_temp, s.teacher_temp, total,
                                                       spe * s.teacher_temp_warmup_epochs);
  const bool pseudo = s.objective.weights.pl > 0.0;
  const int lab_batch = data.unlabelled.empty() ? s.labelled_batch : (use_labelled ? s.labelled_batch : 0);

  if (state.optimizer.steps() == 0 && state.step == 0) state.optimizer.reset(state.pair.student.parameters());

  for (int epoch = state.epoch; epoch < s.epochs; ++epoch) {
    const auto order = shuffled(data.unlabelled.size(), derive_seed({s.seed, kOrder, static_cast<std::uint64_t>(epoch)}));
    const auto lab_order = shuffled(data.labelled.size(), derive_seed({s.seed, kLabelledOrder, static_cast<std::uint64_t>(epoch)}));
    for (std::int64_t local = 0; local < spe; ++local) {
      const std::int64_t step = state.step;
      const auto ustep = static_cast<std::uint64_t>(step);
      std::vector<loss::BatchItem> batch;
      std::vector<std::size_t> batch_image;

      const std::size_t u0 = static_cast<std::size_t>(local) * static_cast<std::size_t>(s.batch_size);
      for (std::size_t k = u0; k < std::min(order.size(), u0 + static_cast<std::size_t>(s.batch_size)); ++k) {
        loss::BatchItem item;
        item.index = batch.size();
        item.views = views::generate_views(*data.unlabelled[order[k]], s.crops, derive_seed({s.seed, kViews, ustep, k}));
        item.pseudo_label = pseudo;
        batch.push_back(std::move(item));
        batch_image.push_back(data.unlabelled_ids.empty() ? order[k] : data.unlabelled_ids[order[k]]);
      }
      const std::size_t n_unlabelled = batch.size();
      if (lab_batch > 0 && !lab_order.empty()) {
        for (int j = 0; j < lab_batch; ++j) {
          const std::size_t pos = (static_cast<std::size_t>(local) * static_cast<std::size_t>(lab_batch) + static_cast<std::size_t>(j));
          if (data.unlabelled.empty() && pos >= lab_order.size()) break;
          const std::size_t li = lab_order[pos % lab_order.size()];
          loss::BatchItem item;
          item.index = batch.size();
          item.views = views::generate_views(*data.labelled[li], s.crops,
                                             derive_seed({s.seed, kLabelledViews, ustep, static_cast<std::uint64_t>(j)}));
          item.label = data.labels[li];
          if (data.num_classes >= 2) {
            Rng rng(derive_seed({s.seed, kNegative, ustep, static_cast<std::uint64_t>(j)}));
            item.negative = static_cast<int>(semantics::sample_negative(static_cast<std::size_t>(data.labels[li]),
                                                                        static_cast<std::size_t>(data.num_classes), rng));
          }
          batch.push_back(std::move(item));
        }
      }

      loss::ObjectiveSettings os = s.objective;
      const double tau_t = model::schedule_value_clamped(tt_s, step);
      os.temps.teacher = tau_t;
      state.pair.student.parameters().zero_grad();
      const auto result = loss::objective_with_gradients(state.pair, batch, os);

      StepLog log;
      log.epoch = epoch;
      log.step = step;
      log.losses = result.losses;
      log.lr = model::schedule_value_clamped(lr_s, step);
      log.weight_decay = model::schedule_value_clamped(wd_s, step);
      log.momentum = model::schedule_value_clamped(mom_s, step);
      log.teacher_temp = tau_t;
      log.grad_norm = clip_grad_norm(state.pair.student.parameters(), s.clip, os.trainable);
      state.optimizer.step(state.pair.student.parameters(), log.lr, log.weight_decay, os.trainable);
      if (os.trainable.backbone) state.pair.student.update_input_mean(result.student_feature_mean, kFeatureMeanMomentum);
      model::ema_update(state.pair, log.momentum);
      if (os.trainable.backbone && result.teacher_feature_mean.size() > 0)
        state.pair.teacher.update_input_mean(result.teacher_feature_mean, kFeatureMeanMomentum);
      if (os.weights.ssl > 0.0) model::update_center(state.pair, result.teacher_ssl_logits, model::kCenterMomentum);
      state.pair.momentum = log.momentum;
      ++state.step;

      if (hooks.crop_records)
        for (std::size_t k = 0; k < n_unlabelled; ++k) record(*hooks.crop_records, epoch, batch_image[k], batch[k], result.predictions[k]);
      if (hooks.on_step) hooks.on_step(log);
    }
    state.epoch = epoch + 1;
    if (hooks.on_epoch_end) hooks.on_epoch_end(state);
  }
}

}  // namespace lava::train
