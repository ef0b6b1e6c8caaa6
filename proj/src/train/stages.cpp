// SPDX-License-Identifier: Apache-2.0
#include "lava/train/stages.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lava/data/composite.hpp"
#include "lava/data/label_oracle.hpp"
#include "lava/errors.hpp"
#include "lava/eval/analysis.hpp"
#include "lava/eval/knn.hpp"
#include "lava/model/checkpoint.hpp"
#include "lava/rng.hpp"
#include "lava/semantics/embedding_table.hpp"
#include "lava/train/trainer.hpp"

namespace lava::train {

namespace fs = std::filesystem;

namespace {

enum : std::uint64_t { kSplit = 11, kModel = 12, kClassifier = 13, kSynth = 14, kEpisodes = 15, kAnalyze = 16, kTrain = 17 };

std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

RunConfig with_absolute_paths(RunConfig c) {
  for (std::string* p : {&c.out, &c.data_root, &c.source_root, &c.embeddings, &c.init_checkpoint, &c.crop_log})
    if (!p->empty()) *p = fs::absolute(*p).lexically_normal().string();
  return c;
}

fs::path prepare_out(const RunConfig& cfg) {
  const fs::path out(cfg.out);
  fs::create_directories(out);
  std::ofstream snap(out / "config.snapshot");
  write_config(with_absolute_paths(cfg), snap);
  return out;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
  if (!f) throw DataError("cannot write " + p.string());
}

class LossCsv {
public:
  explicit LossCsv(const fs::path& p, bool append) : f_(p, append ? std::ios::app : std::ios::trunc) {
    if (!append) f_ << "phase,epoch,step,ssl,sem,pl,cls,total,lr,weight_decay,momentum,teacher_temp,grad_norm\n";
  }
  void row(int phase, const StepLog& l) {
    f_ << phase << ',' << l.epoch << ',' << l.step << ',' << num(l.losses.ssl) << ',' << num(l.losses.sem) << ','
       << num(l.losses.pl) << ',' << num(l.losses.cls) << ',' << num(l.losses.total) << ',' << num(l.lr) << ','
       << num(l.weight_decay) << ',' << num(l.momentum) << ',' << num(l.teacher_temp) << ',' << num(l.grad_norm) << '\n';
  }

private:
  std::ofstream f_;
};

model::Checkpoint state_checkpoint(const TrainState& s, Stage stage, int phase) {
  model::Checkpoint c;
  model::pack_pair(c, s.pair);
  s.optimizer.save(c, "optim/");
  c.put_ints("run/state", {static_cast<std::int64_t>(stage), phase, s.epoch, s.step});
  return c;
}

struct Resumed {
  TrainState state;
  int phase = 1;
};

Resumed restore_state(const fs::path& path, Stage stage) {
  const auto ckpt = model::read_checkpoint(path);
  if (!ckpt.contains("run/state")) throw ConfigError(path.string() + " is not a resumable training checkpoint");
  const auto run = ckpt.ints("run/state");
  if (run.size() != 4 || run[0] != static_cast<std::int64_t>(stage))
    throw ConfigError(path.string() + " was written by a different stage");
  auto unpacked = model::unpack_pair(ckpt);
  if (!unpacked.missing.empty()) throw FormatError("checkpoint lacks " + unpacked.missing.front());
  Resumed r;
  r.state.pair = std::move(unpacked.pair);
  r.state.optimizer.load(ckpt, "optim/", r.state.pair.student.parameters());
  r.phase = static_cast<int>(run[1]);
  r.state.epoch = static_cast<int>(run[2]);
  r.state.step = run[3];
  return r;
}

TrainSettings settings_from(const RunConfig& c) {
  TrainSettings s;
  s.epochs = c.epochs;
  s.batch_size = c.batch_size;
  s.labelled_batch = c.labelled_batch;
  s.lr = c.lr;
  s.lr_min = std::min(c.lr_min, c.lr);
  s.warmup_epochs = c.warmup_epochs;
  s.weight_decay_start = c.weight_decay_start;
  s.weight_decay_end = c.weight_decay_end;
  s.momentum_start = c.momentum_start;
  s.momentum_end = c.momentum_end;
  s.teacher_temp = c.tau_teacher;
  s.teacher_temp_warmup_start = c.tau_teacher_warmup_epochs > 0 ? c.tau_teacher_warmup_start : c.tau_teacher;
  s.teacher_temp_warmup_epochs = c.tau_teacher_warmup_epochs;
  s.clip = c.clip;
  s.crops = c.crops;
  s.objective.weights = c.weights;
  s.objective.strategy = c.strategy;
  s.objective.eta = c.eta;
  s.objective.temps.student = c.tau_student;
  s.seed = derive_seed({c.seed, kTrain, static_cast<std::uint64_t>(c.stage)});
  return s;
}

std::vector<const views::Image*> images_of(const data::DatasetManifest& m, const std::vector<std::size_t>& idx) {
  return data::image_ptrs(m, idx);
}

std::string format_accuracies(const eval::Accuracies& a) {
  std::ostringstream s;
  s << "softmax_accuracy = " << num(a.softmax) << "\nknn_accuracy = " << num(a.knn) << '\n';
  if (a.has_semantic) s << "semantic_accuracy = " << num(a.semantic) << '\n';
  s << "evaluated_items = " << a.count << '\n';
  return s.str();
}

void put_accuracies(StageReport& r, const eval::Accuracies& a) {
  r.metrics["softmax_accuracy"] = a.softmax;
  r.metrics["knn_accuracy"] = a.knn;
  if (a.has_semantic) r.metrics["semantic_accuracy"] = a.semantic;
}

void check_semantic_dim(const model::TeacherStudentPair& pair, const Matrix& emb) {
  if (pair.student.architecture().semantic_dim != emb.cols())
    throw ConfigError("semantic head has " + std::to_string(pair.student.architecture().semantic_dim) +
                      " outputs but embeddings have dimension " + std::to_string(emb.cols()));
}

data::GlyphStyle style_for(const RunConfig& c) {
  data::GlyphStyle s;
  s.noise = c.synth_noise;
  if (c.synth_style == "target") {
    s.background = {0.85, 0.78, 0.55};
    s.foreground = {0.15, 0.25, 0.55};
    s.stroke_width = 1.6;
  }
  return s;
}

// ---------------------------------------------------------------- synth

StageReport stage_synth(const RunConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  data::CompositeSpec spec;
  spec.vocabulary = data::make_vocabulary(cfg.synth_classes, cfg.synth_vocab_seed);
  spec.dual_fraction = cfg.synth_dual_fraction;
  spec.style = style_for(cfg);
  spec.validation_per_class = cfg.synth_validation_per_class;
  spec.seed = derive_seed({cfg.seed, kSynth});
  auto manifest = data::generate_composite_dataset(spec, cfg.synth_per_class);
  if (cfg.shots > 0) manifest = data::make_ssl_split(manifest, cfg.shots, derive_seed({cfg.seed, kSplit}));
  data::save_dataset(manifest, out / "data");

  std::vector<std::string> names;
  for (const auto& g : spec.vocabulary) names.push_back(g.name);
  std::vector<semantics::SimilarityGroup> groups;
  data::CompositeSpec held = spec;
  held.vocabulary.clear();
  held.dual_fraction = 0.0;
  held.validation_per_class = 0;
  held.seed = derive_seed({cfg.seed, kSynth, 2});
  for (int k = 0; k < cfg.synth_siblings; ++k) {
    const auto parent = static_cast<std::size_t>(k) % spec.vocabulary.size();
    auto sib = data::make_sibling(spec.vocabulary, parent, spec.vocabulary[parent].name + "_sib", cfg.synth_vocab_seed);
    groups.push_back({{spec.vocabulary[parent].name, sib.name}, cfg.synth_sibling_angle});
    names.push_back(sib.name);
    held.vocabulary.push_back(std::move(sib));
  }
  const auto table = semantics::synthesize_embeddings(names, cfg.synth_embed_dim, cfg.synth_vocab_seed, groups);
  semantics::save_embeddings(table, out / "embeddings.txt");

  StageReport r;
  std::ostringstream s;
  s << "classes = " << spec.vocabulary.size() << "\nitems = " << manifest.size()
    << "\nlabelled = " << manifest.indices(data::Split::Labelled).size()
    << "\nunlabelled = " << manifest.indices(data::Split::Unlabelled).size()
    << "\nvalidation = " << manifest.indices(data::Split::Validation).size() << '\n';
  if (!held.vocabulary.empty()) {
    const auto heldout = data::generate_composite_dataset(held, cfg.synth_heldout_per_class);
    data::save_dataset(heldout, out / "heldout");
    s << "heldout_classes = " << held.vocabulary.size() << "\nheldout_items = " << heldout.size() << '\n';
  }
  r.summary = s.str();
  r.metrics["items"] = static_cast<double>(manifest.size());
  write_text(out / "summary.txt", r.summary);
  return r;
}

// ---------------------------------------------------------------- training stages

struct Runner {
  const RunConfig& cfg;
  fs::path out;
  Stage stage;

  void epoch_checkpoint(const TrainState& s, int phase) const {
    write_checkpoint(state_checkpoint(s, stage, phase), out / "last.ckpt");
  }
};

StageReport finish_training(const fs::path& out, const TrainState& state, Stage stage, int phase,
                            std::string summary) {
  StageReport r;
  r.checkpoint = out / "model.ckpt";
  model::write_checkpoint(state_checkpoint(state, stage, phase), r.checkpoint);
  r.summary = std::move(summary);
  return r;
}

StageReport stage_pretrain(const RunConfig& cfg, const std::optional<fs::path>& resume) {
  const fs::path out = prepare_out(cfg);
  const auto m = load_manifest(cfg, cfg.data_root);
  std::vector<std::size_t> train_idx = m.indices(data::Split::Labelled);
  const auto unl = m.indices(data::Split::Unlabelled);
  train_idx.insert(train_idx.end(), unl.begin(), unl.end());
  std::sort(train_idx.begin(), train_idx.end());
  if (train_idx.empty()) throw DataError("no training images in " + cfg.data_root);

  std::optional<Matrix> emb;
  if (cfg.semantic_epochs > 0) emb = class_embeddings(cfg, m.classes());

  model::Architecture arch = cfg.arch;
  arch.num_classes = static_cast<int>(m.classes().size());
  if (emb) arch.semantic_dim = static_cast<int>(emb->cols());
  TrainState state;
  int phase = 1;
  if (resume) {
    auto r = restore_state(*resume, Stage::Pretrain);
    state = std::move(r.state);
    phase = r.phase;
  } else {
    state.pair = model::TeacherStudentPair::from_student(model::ModelStack(arch, derive_seed({cfg.seed, kModel})),
                                                         cfg.momentum_start);
  }
  const Runner run{cfg, out, Stage::Pretrain};
  LossCsv csv(out / "losses.csv", false);

  if (phase == 1) {
    TrainData d;
    d.unlabelled = images_of(m, train_idx);
    d.unlabelled_ids = train_idx;
    TrainSettings s = settings_from(cfg);
    s.objective.weights = {cfg.weights.ssl > 0 ? cfg.weights.ssl : 1.0, 0, 0, 0};
    TrainHooks h;
    h.on_step = [&](const StepLog& l) { csv.row(1, l); };
    h.on_epoch_end = [&](const TrainState& st) { run.epoch_checkpoint(st, 1); };
    train(state, d, s, h);
    // Phase 2 starts from the teacher, the better of the two networks.
    state.pair.student = state.pair.teacher;
    state.optimizer = AdamW();
    state.epoch = 0;
    state.step = 0;
    phase = 2;
  }
  if (cfg.semantic_epochs > 0) {
    TrainData d;
    for (auto i : m.indices(data::Split::Labelled)) {
      d.labelled.push_back(&m.item(i).image);
      d.labels.push_back(*m.label(i));
    }
    if (d.labelled.empty()) throw DataError("semantic phase needs labelled images");
    d.num_classes = static_cast<int>(m.classes().size());
    TrainSettings s = settings_from(cfg);
    s.epochs = cfg.semantic_epochs;
    s.lr = cfg.semantic_lr;
    s.lr_min = cfg.semantic_lr * 0.01;
    s.warmup_epochs = 0;
    s.weight_decay_start = s.weight_decay_end = 0.0;
    s.momentum_start = s.momentum_end = 0.0;  // teacher tracks the student exactly
    s.labelled_batch = std::max(1, cfg.labelled_batch);
    s.crops.n_small_student = 0;
    s.crops.n_small_teacher = 0;
    s.crops.n_large_teacher = 0;
    s.crops.share_large_crops = false;
    s.objective.weights = {0, 1, 0, 0};
    s.objective.class_embeddings = &*emb;
    s.objective.trainable = model::Trainable::only_semantic();
    s.seed = derive_seed({s.seed, 2});
    TrainHooks h;
    h.on_step = [&](const StepLog& l) { csv.row(2, l); };
    h.on_epoch_end = [&](const TrainState& st) { run.epoch_checkpoint(st, 2); };
    train(state, d, s, h);
  }
  state.pair.momentum = cfg.momentum_start;
  std::ostringstream sum;
  sum << "stage = pretrain\nimages = " << train_idx.size() << "\nepochs = " << cfg.epochs
      << "\nsemantic_epochs = " << cfg.semantic_epochs << '\n';
  return finish_training(out, state, Stage::Pretrain, phase, sum.str());
}

StageReport stage_adapt(const RunConfig& cfg, const std::optional<fs::path>& resume) {
  const fs::path out = prepare_out(cfg);
  const auto m = load_manifest(cfg, cfg.data_root);
  TrainState state;
  if (resume) {
    state = restore_state(*resume, Stage::Adapt).state;
  } else {
    const auto ckpt = model::read_checkpoint(cfg.init_checkpoint);
    auto unpacked = model::unpack_pair(ckpt);
    for (const auto& name : unpacked.missing) {
      const bool crucial = name.find("/backbone.") != std::string::npos || name.find("/projection.") != std::string::npos ||
                           name.find("/ssl.") != std::string::npos;
      if (crucial)
        throw ConfigError("adaptation refused: checkpoint lacks " + name +
                          "; the backbone, projection and self-distillation head must all be loaded");
    }
    state.pair = std::move(unpacked.pair);
  }
  std::vector<std::size_t> idx = m.indices(data::Split::Labelled);
  const auto unl = m.indices(data::Split::Unlabelled);
  idx.insert(idx.end(), unl.begin(), unl.end());
  std::sort(idx.begin(), idx.end());
  if (idx.empty()) throw DataError("no target training images in " + cfg.data_root);
  TrainData d;
  d.unlabelled = images_of(m, idx);
  d.unlabelled_ids = idx;
  TrainSettings s = settings_from(cfg);
  s.objective.weights = {cfg.weights.ssl > 0 ? cfg.weights.ssl : 1.0, 0, 0, 0};
  const Runner run{cfg, out, Stage::Adapt};
  LossCsv csv(out / "losses.csv", false);
  TrainHooks h;
  h.on_step = [&](const StepLog& l) { csv.row(1, l); };
  h.on_epoch_end = [&](const TrainState& st) { run.epoch_checkpoint(st, 1); };
  train(state, d, s, h);
  std::ostringstream sum;
  sum << "stage = adapt\nimages = " << idx.size() << "\nepochs = " << cfg.epochs
      << "\nmomentum_start = " << num(cfg.momentum_start) << '\n';
  return finish_training(out, state, Stage::Adapt, 1, sum.str());
}

StageReport stage_transfer(const RunConfig& cfg, const std::optional<fs::path>& resume) {
  const fs::path out = prepare_out(cfg);
  const auto m = load_manifest(cfg, cfg.data_root);
  const int n_classes = static_cast<int>(m.classes().size());
  std::optional<Matrix> emb;
  if (!cfg.embeddings.empty()) emb = class_embeddings(cfg, m.classes());

  TrainState state;
  if (resume) {
    state = restore_state(*resume, Stage::Transfer).state;
  } else if (!cfg.init_checkpoint.empty()) {
    auto unpacked = model::unpack_pair(model::read_checkpoint(cfg.init_checkpoint));
    for (const auto& name : unpacked.missing)
      if (name.find("classifier.") == std::string::npos) throw FormatError("checkpoint lacks " + name);
    state.pair = std::move(unpacked.pair);
    // Target classes get a fresh classifier; the semantic head is kept.
    const auto cseed = derive_seed({cfg.seed, kClassifier});
    state.pair.student.reset_classifier(n_classes, cseed);
    state.pair.teacher.reset_classifier(n_classes, cseed);
    state.pair.step = 0;
  } else {
    model::Architecture arch = cfg.arch;
    arch.num_classes = n_classes;
    if (emb) arch.semantic_dim = static_cast<int>(emb->cols());
    state.pair = model::TeacherStudentPair::from_student(model::ModelStack(arch, derive_seed({cfg.seed, kModel})),
                                                         cfg.momentum_start);
  }
  if (emb) check_semantic_dim(state.pair, *emb);
  state.pair.momentum = cfg.momentum_start;

  TrainData d;
  d.unlabelled_ids = m.indices(data::Split::Unlabelled);
  d.unlabelled = images_of(m, d.unlabelled_ids);
  for (auto i : m.indices(data::Split::Labelled)) {
    d.labelled.push_back(&m.item(i).image);
    d.labels.push_back(*m.label(i));
  }
  d.num_classes = n_classes;
  if (d.labelled.empty() && (cfg.weights.sem > 0 || cfg.weights.cls > 0))
    throw DataError("transfer needs labelled images for the semantic or classification loss");
  TrainSettings s = settings_from(cfg);
  if (emb) s.objective.class_embeddings = &*emb;

  const Runner run{cfg, out, Stage::Transfer};
  LossCsv csv(out / "losses.csv", false);
  std::vector<eval::CropRecord> records;
  TrainHooks h;
  h.on_step = [&](const StepLog& l) { csv.row(1, l); };
  h.on_epoch_end = [&](const TrainState& st) { run.epoch_checkpoint(st, 1); };
  if (cfg.record_crops) h.crop_records = &records;
  train(state, d, s, h);

  if (cfg.record_crops) {
    std::ofstream f(out / "crops.csv");
    f << "epoch,image,crop_slot,prediction\n";
    for (const auto& r : records) f << r.epoch << ',' << r.image << ',' << r.slot << ',' << r.prediction << '\n';
    const auto hidden = data::LabelOracle::hidden_labels(m);
    const auto curves = eval::oracle_pseudo_label_accuracy(hidden, records);
    std::ofstream oc(out / "oracle_curves.csv");
    eval::write_oracle_csv(oc, curves);
  }

  StageReport r = finish_training(out, state, Stage::Transfer, 1, "");
  const auto acc = evaluate_teacher(state.pair.teacher, m, cfg, emb ? &*emb : nullptr);
  put_accuracies(r, acc);
  std::ostringstream sum;
  sum << "stage = transfer\nstrategy = " << loss::to_string(cfg.strategy) << "\nlabelled = " << d.labelled.size()
      << "\nunlabelled = " << d.unlabelled.size() << "\nepochs = " << cfg.epochs << '\n'
      << format_accuracies(acc);
  r.summary = sum.str();
  std::ofstream ev(out / "eval.csv");
  ev << "metric,value\nsoftmax_accuracy," << num(acc.softmax) << "\nknn_accuracy," << num(acc.knn) << '\n';
  if (acc.has_semantic) ev << "semantic_accuracy," << num(acc.semantic) << '\n';
  return r;
}

// ---------------------------------------------------------------- evaluation stages

StageReport stage_eval(const RunConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  const auto m = load_manifest(cfg, cfg.data_root);
  const auto pair = load_pair(cfg.init_checkpoint);
  std::optional<Matrix> emb;
  if (!cfg.embeddings.empty()) {
    emb = class_embeddings(cfg, m.classes());
    check_semantic_dim(pair, *emb);
  }
  if (pair.teacher.architecture().num_classes != static_cast<int>(m.classes().size()))
    throw ConfigError("checkpoint classifier has " + std::to_string(pair.teacher.architecture().num_classes) +
                      " classes, dataset has " + std::to_string(m.classes().size()));
  const auto acc = evaluate_teacher(pair.teacher, m, cfg, emb ? &*emb : nullptr);
  StageReport r;
  put_accuracies(r, acc);
  r.summary = "stage = eval\nknn_bank = " + cfg.knn_bank + "\nk = " + std::to_string(cfg.knn_k) + "\n" + format_accuracies(acc);
  std::ofstream ev(out / "eval.csv");
  ev << "metric,value\nsoftmax_accuracy," << num(acc.softmax) << "\nknn_accuracy," << num(acc.knn) << '\n';
  if (acc.has_semantic) ev << "semantic_accuracy," << num(acc.semantic) << '\n';
  return r;
}

StageReport stage_episodes(const RunConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  const auto m = load_manifest(cfg, cfg.data_root);
  const auto pair = load_pair(cfg.init_checkpoint);
  std::optional<Matrix> emb;
  if (!cfg.embeddings.empty()) {
    emb = class_embeddings(cfg, m.classes());
    check_semantic_dim(pair, *emb);
  }
  eval::EpisodeReport report;
  try {
    report = run_fsl_episodes(pair.teacher, m, emb ? &*emb : nullptr, cfg);
  } catch (const DomainError& e) {
    throw DataError(e.what());
  }
  std::ofstream f(out / "episodes.csv");
  eval::write_episode_csv(f, report);
  StageReport r;
  r.metrics["mean_accuracy"] = report.mean;
  r.metrics["ci95"] = report.ci95;
  r.metrics["mean_precision"] = report.mean_precision;
  if (report.mean_semantic >= 0.0) r.metrics["mean_semantic_accuracy"] = report.mean_semantic;
  double chance = 0.0;
  for (const auto& e : report.episodes) chance += 1.0 / e.ways;
  r.metrics["mean_chance"] = chance / static_cast<double>(report.episodes.size());
  std::ostringstream s;
  s << "stage = episodes\nhead = " << (uses_semantic_head(cfg) ? "semantic" : "softmax") << "\nepisodes = "
    << report.episodes.size() << "\nmean_accuracy = " << num(report.mean) << "\nci95 = " << num(report.ci95)
    << "\nmean_precision = " << num(report.mean_precision) << '\n';
  if (report.mean_semantic >= 0.0) s << "mean_semantic_accuracy = " << num(report.mean_semantic) << '\n';
  r.summary = s.str();
  return r;
}

StageReport stage_analyze(const RunConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  const auto m = load_manifest(cfg, cfg.data_root);
  const auto pair = load_pair(cfg.init_checkpoint);
  StageReport r;
  std::ostringstream s;
  s << "stage = analyze\n";

  std::vector<std::size_t> items = m.indices(data::Split::Unlabelled);
  if (items.empty()) items = m.indices(data::Split::Labelled);
  std::vector<std::vector<std::vector<int>>> history;
  if (!cfg.crop_log.empty()) {
    std::ifstream in(cfg.crop_log);
    if (!in) throw DataError("cannot read crop log " + cfg.crop_log);
    std::string line;
    std::getline(in, line);
    std::map<std::size_t, std::map<int, std::vector<int>>> by_image;
    std::vector<eval::CropRecord> records;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string f[4];
      for (auto& x : f) std::getline(ls, x, ',');
      eval::CropRecord rec{std::stoi(f[0]), static_cast<std::size_t>(std::stoul(f[1])), f[2], std::stoi(f[3])};
      if (rec.slot.find("large") != std::string::npos) by_image[rec.image][rec.epoch].push_back(rec.prediction);
      records.push_back(rec);
    }
    items.clear();
    for (auto& [img, epochs] : by_image) {
      items.push_back(img);
      std::vector<std::vector<int>> h;
      for (auto& [e, labels] : epochs) h.push_back(labels);
      history.push_back(std::move(h));
    }
    const auto curves = eval::oracle_pseudo_label_accuracy(data::LabelOracle::hidden_labels(m), records);
    std::ofstream oc(out / "oracle_curves.csv");
    eval::write_oracle_csv(oc, curves);
  } else {
    history = large_crop_history(pair, m, items, cfg);
  }

  if (!history.empty()) {
    const auto ranked = eval::rank_by_disagreement(history);
    std::ofstream f(out / "disagreement_ranking.csv");
    f << "rank,image,dual,mean_rate,iterations\n";
    double dual_sum = 0, single_sum = 0;
    std::size_t dual_n = 0, single_n = 0, top_dual = 0;
    const std::size_t decile = std::max<std::size_t>(1, ranked.size() / 10);
    for (std::size_t k = 0; k < ranked.size(); ++k) {
      const std::size_t img = items[ranked[k].image];
      const bool dual = m.item(img).dual;
      f << k << ',' << img << ',' << dual << ',' << num(ranked[k].mean_rate) << ',' << ranked[k].iterations << '\n';
      (dual ? dual_sum : single_sum) += ranked[k].mean_rate;
      ++(dual ? dual_n : single_n);
      if (k < decile && dual) ++top_dual;
    }
    if (dual_n) r.metrics["dual_disagreement"] = dual_sum / static_cast<double>(dual_n);
    if (single_n) r.metrics["single_disagreement"] = single_sum / static_cast<double>(single_n);
    r.metrics["top_decile_dual_share"] = static_cast<double>(top_dual) / static_cast<double>(decile);
    r.metrics["dual_share"] = static_cast<double>(dual_n) / static_cast<double>(ranked.size());
    for (const char* k : {"dual_disagreement", "single_disagreement", "top_decile_dual_share", "dual_share"})
      if (r.metrics.contains(k)) s << k << " = " << num(r.metrics[k]) << '\n';
  }

  if (!cfg.source_root.empty()) {
    const auto src = load_manifest(cfg, cfg.source_root);
    auto queries = evaluation_indices(m);
    Rng rng(derive_seed({cfg.seed, kAnalyze}));
    rng.shuffle(queries.begin(), queries.end());
    if (queries.size() > static_cast<std::size_t>(cfg.collapse_queries)) queries.resize(static_cast<std::size_t>(cfg.collapse_queries));
    std::sort(queries.begin(), queries.end());
    auto train_of = [](const data::DatasetManifest& d) {
      auto v = d.indices(data::Split::Labelled);
      const auto u = d.indices(data::Split::Unlabelled);
      v.insert(v.end(), u.begin(), u.end());
      std::sort(v.begin(), v.end());
      return v;
    };
    const auto si = train_of(src), ti = train_of(m);
    const auto zs = eval::embed_all(pair.teacher, images_of(src, si)).z;
    const auto zt = eval::embed_all(pair.teacher, images_of(m, ti)).z;
    const auto zq = eval::embed_all(pair.teacher, images_of(m, queries)).z;
    eval::FeatureBank bank;
    bank.vectors.resize(zs.rows() + zt.rows(), zs.cols());
    bank.vectors << zs, zt;
    for (auto i : si) {
      bank.labels.push_back(data::LabelOracle::true_label(src, i));
      bank.domains.push_back(eval::Domain::Source);
    }
    for (auto i : ti) {
      bank.labels.push_back(data::LabelOracle::true_label(m, i));
      bank.domains.push_back(eval::Domain::Target);
    }
    const auto rep = eval::collapse_fraction(zq, bank, cfg.collapse_k);
    std::ofstream f(out / "collapse.csv");
    eval::write_collapse_csv(f, rep, bank);
    r.metrics["collapse_fraction"] = rep.mean;
    s << "collapse_fraction = " << num(rep.mean) << '\n';
  }
  r.summary = s.str();
  return r;
}

}  // namespace

// ---------------------------------------------------------------- public helpers

model::TeacherStudentPair load_pair(const fs::path& checkpoint) {
  auto unpacked = model::unpack_pair(model::read_checkpoint(checkpoint));
  if (!unpacked.missing.empty()) throw FormatError(checkpoint.string() + " lacks " + unpacked.missing.front());
  return std::move(unpacked.pair);
}

data::DatasetManifest load_manifest(const RunConfig& cfg, const std::string& root) {
  auto m = data::load_dataset(root);
  if (cfg.shots >= 0) m = data::make_ssl_split(m, cfg.shots, derive_seed({cfg.seed, kSplit}));
  return m;
}

Matrix class_embeddings(const RunConfig& cfg, const std::vector<std::string>& classes) {
  if (cfg.embeddings.empty()) throw ConfigError("embeddings.path is required");
  const auto table = semantics::load_embeddings(cfg.embeddings);
  for (const auto& c : classes)
    if (!table.index_of(c))
      throw ConfigError("class '" + c + "' has no embedding in " + cfg.embeddings + " (dataset has " +
                        std::to_string(classes.size()) + " classes, table has " + std::to_string(table.size()) + ")");
  return table.rows_for(classes);
}

std::vector<std::size_t> evaluation_indices(const data::DatasetManifest& m) {
  for (auto s : {data::Split::Validation, data::Split::Test, data::Split::Labelled}) {
    auto v = m.indices(s);
    if (!v.empty()) return v;
  }
  throw EvaluationError("dataset has no evaluation items");
}

eval::Accuracies evaluate_teacher(const model::ModelStack& teacher, const data::DatasetManifest& m, const RunConfig& cfg,
                                  const Matrix* class_emb) {
  const auto idx = evaluation_indices(m);
  std::vector<int> labels;
  for (auto i : idx) labels.push_back(data::LabelOracle::true_label(m, i));
  std::vector<std::size_t> bank_idx = m.indices(data::Split::Labelled);
  if (cfg.knn_bank == "all_train") {
    const auto u = m.indices(data::Split::Unlabelled);
    bank_idx.insert(bank_idx.end(), u.begin(), u.end());
    std::sort(bank_idx.begin(), bank_idx.end());
  }
  if (bank_idx == idx) bank_idx.clear();
  std::optional<eval::FeatureBank> bank;
  if (!bank_idx.empty()) {
    bank.emplace();
    bank->vectors = eval::embed_all(teacher, images_of(m, bank_idx)).z;
    for (auto i : bank_idx) bank->labels.push_back(data::LabelOracle::true_label(m, i));
    bank->tag_all(eval::Domain::Target);
  }
  const auto imgs = images_of(m, idx);
  eval::EvalInputs in;
  in.images = imgs;
  in.labels = labels;
  in.knn_bank = bank ? &*bank : nullptr;
  in.class_embeddings = class_emb;
  in.k = bank ? std::min<int>(cfg.knn_k, static_cast<int>(bank->size())) : cfg.knn_k;
  return eval::evaluate(teacher, in);
}

bool uses_semantic_head(const RunConfig& cfg) {
  if (cfg.eval_head == "semantic") return true;
  if (cfg.eval_head == "softmax") return false;
  return cfg.weights.cls == 0.0 && cfg.weights.sem > 0.0;
}

eval::EpisodeReport run_fsl_episodes(const model::ModelStack& base, const data::DatasetManifest& m,
                                     const Matrix* class_emb, const RunConfig& cfg) {
  const bool semantic = uses_semantic_head(cfg);
  if (semantic && !class_emb) throw ConfigError("semantic episodes need embeddings.path");
  std::vector<std::size_t> pool;
  std::vector<int> pool_labels;
  // Few-shot benchmarks are fully annotated; every item joins the pool.
  for (std::size_t i = 0; i < m.size(); ++i) {
    pool.push_back(i);
    pool_labels.push_back(data::LabelOracle::true_label(m, i));
  }
  if (pool.empty()) throw DataError("no items for episodes");
  const Matrix z = eval::embed_all(base, images_of(m, pool)).z;

  eval::EpisodeSampler sampler;
  sampler.pool_labels = pool_labels;
  sampler.min_ways = cfg.min_ways;
  sampler.max_ways = cfg.max_ways;
  sampler.min_shots = cfg.min_shots;
  sampler.max_shots = cfg.max_shots;
  sampler.queries_per_class = cfg.queries_per_class;

  auto gather = [&](const std::vector<std::size_t>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), z.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = z.row(static_cast<Eigen::Index>(rows[k]));
    return out;
  };

  auto runner = [&](const eval::Episode& ep) {
    model::ModelStack stack = base;
    const int ways = ep.ways();
    Matrix E;
    if (class_emb) {
      E.resize(ways, class_emb->cols());
      for (int c = 0; c < ways; ++c) E.row(c) = class_emb->row(ep.classes[static_cast<std::size_t>(c)]);
    }
    if (!semantic) stack.reset_classifier(ways, derive_seed({ep.seed, kClassifier}));
    const model::Trainable tr = semantic ? model::Trainable{false, true, true, false, false}
                                         : model::Trainable{false, true, false, true, false};
    const Matrix zs = gather(ep.support);
    const Matrix zq = gather(ep.query);
    const auto n = static_cast<double>(ep.support.size());
    AdamW opt;
    opt.reset(stack.parameters());
    Rng rng(derive_seed({ep.seed, kEpisodes}));
    for (int e = 0; e < cfg.finetune_epochs; ++e) {
      stack.parameters().zero_grad();
      model::ForwardCache cache;
      const auto o = stack.forward_heads(zs, &cache);
      model::OutputGrads g;
      if (semantic) {
        g.m = Matrix::Zero(o.m.rows(), o.m.cols());
        for (Eigen::Index r = 0; r < o.m.rows(); ++r) {
          const int y = ep.support_labels[static_cast<std::size_t>(r)];
          const auto neg = semantics::sample_negative(static_cast<std::size_t>(y), static_cast<std::size_t>(ways), rng);
          const auto h = loss::semantic_hinge_loss_grad(o.m.row(r).transpose(), E.row(y).transpose(),
                                                        E.row(static_cast<Eigen::Index>(neg)).transpose(), cfg.eta);
          g.m.row(r) = h.grad_m.transpose() / n;
        }
      } else {
        g.logits = Matrix::Zero(o.logits.rows(), o.logits.cols());
        for (Eigen::Index r = 0; r < o.logits.rows(); ++r) {
          const auto c = loss::classification_loss_grad(o.logits.row(r), ep.support_labels[static_cast<std::size_t>(r)],
                                                        cfg.tau_student);
          g.logits.row(r) = c.grad_logits.row(0) / n;
        }
      }
      stack.backward(cache, g, tr);
      opt.step(stack.parameters(), cfg.finetune_lr, 0.0, tr);
    }
    const auto o = stack.forward_heads(zq);
    const auto pred = semantic ? eval::semantic_predictions(o.m, E) : eval::softmax_predictions(o.logits);
    eval::EpisodeOutcome out;
    out.accuracy = eval::accuracy(ep.query_labels, pred);
    out.macro_precision = eval::macro_precision(ep.query_labels, pred, ways);
    if (class_emb) out.semantic_accuracy = eval::accuracy(ep.query_labels, eval::semantic_predictions(o.m, E));
    return out;
  };
  return eval::run_episodes(runner, sampler, cfg.n_episodes, derive_seed({cfg.seed, kEpisodes}),
                           cfg.ci_multiplier);
}

std::vector<std::vector<std::vector<int>>> large_crop_history(const model::TeacherStudentPair& pair,
                                                              const data::DatasetManifest& m,
                                                              const std::vector<std::size_t>& items,
                                                              const RunConfig& cfg) {
  views::CropConfig crops = cfg.crops;
  crops.n_small_student = 0;
  crops.n_small_teacher = 0;
  std::vector<std::vector<std::vector<int>>> history(items.size());
  for (int it = 0; it < cfg.analyze_iterations; ++it) {
    for (std::size_t k = 0; k < items.size(); ++k) {
      const auto vs = views::generate_views(m.item(items[k]).image, crops,
                                            derive_seed({cfg.seed, kAnalyze, static_cast<std::uint64_t>(it), items[k]}));
      std::vector<const views::Image*> s, t;
      for (const auto& v : vs.student) s.push_back(&v.image);
      for (const auto& v : vs.teacher) t.push_back(&v.image);
      std::vector<int> labels;
      if (!t.empty())
        for (int p : eval::softmax_predictions(pair.teacher.forward(t).logits)) labels.push_back(p);
      if (!s.empty())
        for (int p : eval::softmax_predictions(pair.student.forward(s).logits)) labels.push_back(p);
      history[k].push_back(std::move(labels));
    }
  }
  return history;
}

StageReport run_stage(const RunConfig& cfg, const std::optional<fs::path>& resume) {
  cfg.validate();
  if (resume && !(cfg.stage == Stage::Pretrain || cfg.stage == Stage::Adapt || cfg.stage == Stage::Transfer))
    throw ConfigError(std::string("stage ") + to_string(cfg.stage) + " cannot resume");
  for (const std::string* p : {&cfg.data_root, &cfg.source_root, &cfg.embeddings, &cfg.init_checkpoint, &cfg.crop_log})
    if (!p->empty() && !fs::exists(*p)) throw ConfigError("path does not exist: " + *p);
  if (resume && !fs::exists(*resume)) throw ConfigError("path does not exist: " + resume->string());
  StageReport r;
  switch (cfg.stage) {
    case Stage::Synth: r = stage_synth(cfg); break;
    case Stage::Pretrain: r = stage_pretrain(cfg, resume); break;
    case Stage::Adapt: r = stage_adapt(cfg, resume); break;
    case Stage::Transfer: r = stage_transfer(cfg, resume); break;
    case Stage::Eval: r = stage_eval(cfg); break;
    case Stage::Episodes: r = stage_episodes(cfg); break;
    case Stage::Analyze: r = stage_analyze(cfg); break;
  }
  write_text(fs::path(cfg.out) / "summary.txt", r.summary);
  return r;
}

}  // namespace lava::train
