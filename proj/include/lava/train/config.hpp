// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "lava/losses/losses.hpp"
#include "lava/model/model_stack.hpp"
#include "lava/views/view_pipeline.hpp"

namespace lava::train {

enum class Stage { Synth, Pretrain, Adapt, Transfer, Eval, Episodes, Analyze };

const char* to_string(Stage s);
/// Throws ConfigError for unknown names.
Stage parse_stage(std::string_view s);

struct RunConfig {
  Stage stage = Stage::Transfer;
  std::uint64_t seed = 0;
  std::string out = "runs/lava";

  // Inputs.
  std::string data_root;
  std::string source_root;       // analyze: source-domain dataset for the collapse metric
  std::string embeddings;
  std::string init_checkpoint;
  std::string crop_log;          // analyze: crop records written by transfer
  int shots = -1;                // re-split to this many labelled items per class; -1 keeps the manifest

  model::Architecture arch;

  int epochs = 20;
  int batch_size = 32;
  int labelled_batch = 8;
  double lr = 2.5e-5;
  double lr_min = 1e-6;
  int warmup_epochs = 0;
  double weight_decay_start = 0.04;
  double weight_decay_end = 0.4;
  double clip = 3.0;

  int semantic_epochs = 10;      // pretrain phase 2
  double semantic_lr = 1e-3;

  views::CropConfig crops;
  loss::LossWeights weights;
  double eta = 0.4;
  loss::AggregationStrategy strategy = loss::AggregationStrategy::PairwiseAverageSoft;
  double tau_student = 0.1;
  double tau_teacher = 0.04;
  double tau_teacher_warmup_start = 0.04;
  int tau_teacher_warmup_epochs = 0;
  double momentum_start = 0.99;
  double momentum_end = 1.0;

  int knn_k = 20;
  std::string knn_bank = "labelled";  // labelled | all_train
  std::string eval_head = "auto";     // auto | softmax | semantic
  bool record_crops = false;

  int n_episodes = 600;
  int min_ways = 2;
  int max_ways = 5;
  int min_shots = 1;
  int max_shots = 10;
  int queries_per_class = 10;
  int finetune_epochs = 300;
  double finetune_lr = 1e-3;
  double ci_multiplier = 1.96;

  int collapse_k = 10;
  int collapse_queries = 1000;
  int analyze_iterations = 5;

  int synth_classes = 10;
  int synth_per_class = 200;
  double synth_dual_fraction = 0.2;
  int synth_validation_per_class = 20;
  std::string synth_style = "source";  // source | target
  std::uint64_t synth_vocab_seed = 1;
  double synth_noise = 0.03;
  int synth_embed_dim = 16;
  int synth_siblings = 0;
  double synth_sibling_angle = 20.0;
  int synth_heldout_per_class = 30;

  /// Throws ConfigError on invalid values or missing stage-required fields.
  void validate() const;
};

/// Paper defaults for each stage.
RunConfig defaults_for(Stage stage);

/// Applies "key = value" lines; '#' starts a comment. Unknown keys, bad
/// values and a conflicting "stage" line are ConfigErrors naming the line.
void apply_config(RunConfig& cfg, std::istream& in, std::string_view origin = "config");
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);
void set_value(RunConfig& cfg, std::string_view key, std::string_view value);

/// Every key with its current value, one "key = value" line each, in a
/// fixed order. Reading the snapshot back reproduces the config exactly.
void write_config(const RunConfig& cfg, std::ostream& out);
std::vector<std::string> config_keys();

/// Defaults for `stage`, then the file at `path`.
RunConfig load_run_config(Stage stage, const std::filesystem::path& path);

}  // namespace lava::train
