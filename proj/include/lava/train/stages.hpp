// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "lava/data/dataset.hpp"
#include "lava/eval/episodes.hpp"
#include "lava/eval/evaluate.hpp"
#include "lava/model/teacher_student.hpp"
#include "lava/train/config.hpp"
#include "lava/views/view_pipeline.hpp"

namespace lava::train {

struct StageReport {
  std::map<std::string, double> metrics;
  std::filesystem::path checkpoint;  // empty for stages that write none
  std::string summary;
};

/// Runs one stage into cfg.out: outputs, a resolved-config snapshot
/// (config.snapshot) and summary.txt. `resume` continues a training stage
/// from one of its epoch checkpoints.
StageReport run_stage(const RunConfig& cfg, const std::optional<std::filesystem::path>& resume = std::nullopt);

/// Teacher-student pair stored in a checkpoint file.
model::TeacherStudentPair load_pair(const std::filesystem::path& checkpoint);

/// Dataset at cfg.data_root, re-split when cfg.shots >= 0.
data::DatasetManifest load_manifest(const RunConfig& cfg, const std::string& root);

/// Unit embedding rows for `classes` from cfg.embeddings. Throws ConfigError
/// when a class has no embedding.
Matrix class_embeddings(const RunConfig& cfg, const std::vector<std::string>& classes);

/// Validation split, else test, else labelled.
std::vector<std::size_t> evaluation_indices(const data::DatasetManifest& m);

/// Softmax/KNN/semantic accuracy of the teacher on the evaluation split.
eval::Accuracies evaluate_teacher(const model::ModelStack& teacher, const data::DatasetManifest& m,
                                  const RunConfig& cfg, const Matrix* class_emb);

/// True when few-shot episodes predict through the semantic head.
bool uses_semantic_head(const RunConfig& cfg);

/// Few-shot episodes over all items of `m`, fine-tuning the heads
/// of `base` on each support set with the backbone frozen.
eval::EpisodeReport run_fsl_episodes(const model::ModelStack& base, const data::DatasetManifest& m,
                                     const Matrix* class_emb, const RunConfig& cfg);

/// Large-crop disagreement per image over cfg.analyze_iterations view draws.
std::vector<std::vector<std::vector<int>>> large_crop_history(const model::TeacherStudentPair& pair,
                                                              const data::DatasetManifest& m,
                                                              const std::vector<std::size_t>& items,
                                                              const RunConfig& cfg);

}  // namespace lava::train
