// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "lava/eval/analysis.hpp"
#include "lava/losses/objective.hpp"
#include "lava/model/teacher_student.hpp"
#include "lava/train/optimizer.hpp"
#include "lava/views/view_pipeline.hpp"

namespace lava::train {

struct TrainSettings {
  int epochs = 1;
  int batch_size = 32;      // unlabelled items per step
  int labelled_batch = 8;   // labelled items per step
  double lr = 5e-4;
  double lr_min = 1e-6;
  int warmup_epochs = 0;
  double weight_decay_start = 0.04;
  double weight_decay_end = 0.4;
  double momentum_start = 0.996;
  double momentum_end = 1.0;
  double teacher_temp = 0.04;
  double teacher_temp_warmup_start = 0.04;
  int teacher_temp_warmup_epochs = 0;
  double clip = 3.0;
  views::CropConfig crops;
  loss::ObjectiveSettings objective;  // temps.teacher is replaced by the schedule
  std::uint64_t seed = 0;
};

/// Training-facing view of the data: unlabelled images carry no label.
struct TrainData {
  std::vector<const views::Image*> unlabelled;
  std::vector<std::size_t> unlabelled_ids;  // dataset indices, for crop records
  std::vector<const views::Image*> labelled;
  std::vector<int> labels;
  int num_classes = 0;
};

struct TrainState {
  model::TeacherStudentPair pair;
  AdamW optimizer;
  int epoch = 0;           // epochs completed
  std::int64_t step = 0;   // optimizer steps completed
};

struct StepLog {
  int epoch = 0;
  std::int64_t step = 0;
  loss::LossBreakdown losses;
  double lr = 0.0;
  double weight_decay = 0.0;
  double momentum = 0.0;
  double teacher_temp = 0.0;
  double grad_norm = 0.0;
};

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;
  std::function<void(const TrainState&)> on_epoch_end;
  std::vector<eval::CropRecord>* crop_records = nullptr;  // unlabelled items only
};

std::int64_t steps_per_epoch(const TrainData& data, const TrainSettings& s);

/// Runs epochs state.epoch .. s.epochs-1. Each step: student gradient,
/// clipping, AdamW, EMA teacher update, then the center update when the
/// self-distillation weight is positive. Every random draw derives from
/// (seed, epoch, step, item), so resuming from an epoch boundary replays an
/// uninterrupted run exactly.
void train(TrainState& state, const TrainData& data, const TrainSettings& s, const TrainHooks& hooks = {});

}  // namespace lava::train
