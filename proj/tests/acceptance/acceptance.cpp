// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when any
// criterion fails.
//
//   lava_acceptance [--work DIR] [--only 1,4,6]
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lava/eval/analysis.hpp"
#include "lava/losses/losses.hpp"
#include "lava/losses/objective.hpp"
#include "lava/model/softmax.hpp"
#include "lava/model/teacher_student.hpp"
#include "lava/train/config.hpp"
#include "lava/train/stages.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace lava;
using lava::train::RunConfig;
using lava::train::Stage;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double rel_err(const Matrix& analytic, const Matrix& numeric) {
  return (analytic - numeric).norm() / std::max({analytic.norm(), numeric.norm(), 1e-8});
}

// Central differences of a scalar function of a matrix.
Matrix numeric_grad(Matrix x, const std::function<double(const Matrix&)>& f, double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double orig = x.data()[k];
    x.data()[k] = orig + h;
    const double up = f(x);
    x.data()[k] = orig - h;
    const double dn = f(x);
    x.data()[k] = orig;
    g.data()[k] = (up - dn) / (2.0 * h);
  }
  return g;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

std::vector<Distribution> random_dists(int n, int k, Rng& rng) {
  std::vector<Distribution> out;
  for (int i = 0; i < n; ++i) out.push_back(testing::random_distribution(k, rng));
  return out;
}

// Desk-scale sizes shared by every training experiment.
void desk(RunConfig& c) {
  c.arch.conv_channels = 8;
  c.crops.large_out_size = 24;
  c.crops.small_out_size = 12;
}

RunConfig stage_config(Stage stage, std::uint64_t seed, const fs::path& out) {
  RunConfig c = train::defaults_for(stage);
  c.seed = seed;
  c.out = out.string();
  desk(c);
  return c;
}

// ------------------------------------------------------------------ 1

struct LossFixture {
  model::TeacherStudentPair pair;
  std::vector<loss::BatchItem> batch;
  Matrix embeddings;
};

LossFixture loss_fixture(std::uint64_t seed) {
  Rng rng(seed);
  LossFixture f;
  const auto arch = testing::tiny_architecture();
  f.pair = model::TeacherStudentPair::from_student(model::ModelStack(arch, seed), 0.99);
  f.pair.teacher = model::ModelStack(arch, seed + 1000);
  for (int k = 0; k < arch.ssl_dim; ++k) f.pair.center[k] = 0.1 * rng.normal();
  f.embeddings = random_matrix(arch.num_classes, arch.semantic_dim, rng);
  f.embeddings.rowwise().normalize();
  views::CropConfig crops;
  crops.n_small_student = 2;
  crops.n_large_student = 2;
  crops.n_large_teacher = 2;
  crops.large_out_size = 4;
  crops.small_out_size = 2;
  crops.share_large_crops = seed % 2 == 0;
  for (std::size_t i = 0; i < 4; ++i) {
    loss::BatchItem item;
    item.index = i;
    item.views = views::generate_views(testing::random_image(3, 8, 8, rng), crops, rng.next());
    if (i % 2 == 0) {
      item.label = static_cast<int>(rng.below(4));
      item.negative = (*item.label + 1 + static_cast<int>(rng.below(3))) % 4;
    } else {
      item.pseudo_label = true;
    }
    f.batch.push_back(std::move(item));
  }
  return f;
}

Outcome gradient_suite() {
  constexpr int kSeeds = 20;
  constexpr double kTol = 1e-4;
  std::map<std::string, double> worst;
  auto note = [&](const std::string& name, double e) { worst[name] = std::max(worst[name], e); };

  for (int seed = 1; seed <= kSeeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));

    // Hinge, drawn inside the active region.
    {
      Vector a = random_matrix(8, 1, rng), b = random_matrix(8, 1, rng);
      a.normalize();
      b.normalize();
      const Vector m = b + 0.5 * Vector(random_matrix(8, 1, rng));
      const auto r = loss::semantic_hinge_loss_grad(m, a, b, 0.4);
      const Matrix num = numeric_grad(m, [&](const Matrix& x) { return loss::semantic_hinge_loss(x, a, b, 0.4); });
      note("hinge", rel_err(r.grad_m, num));
    }

    for (auto strategy : loss::kAllStrategies) {
      const Matrix logits = random_matrix(6, 5, rng);
      const auto teacher = random_dists(2 + seed % 3, 5, rng);
      const auto r = loss::multicrop_pl_loss_grad(logits, 0.1, teacher, strategy);
      const Matrix num = numeric_grad(
          logits, [&](const Matrix& x) { return loss::multicrop_pl_loss_grad(x, 0.1, teacher, strategy).loss; });
      note(std::string("pl ") + std::string(loss::to_string(strategy)), rel_err(r.grad_logits, num));
    }

    {
      const Matrix s = random_matrix(5, 7, rng), t = random_matrix(2, 7, rng);
      const Vector center = random_matrix(7, 1, rng, 0.2);
      const std::vector<int> sc = {0, 1, 2, 3, 4}, tc = {0, 1};
      const auto r = loss::self_distillation_loss_grad(s, sc, t, tc, 0.1, 0.04, center);
      const Matrix num = numeric_grad(
          s, [&](const Matrix& x) { return loss::self_distillation_loss(x, sc, t, tc, 0.1, 0.04, center); });
      note("self-distillation", rel_err(r.grad_logits, num));
    }

    {
      auto f = loss_fixture(static_cast<std::uint64_t>(seed));
      loss::ObjectiveSettings s;
      s.weights = {0.5, 1.0, 1.0, 0.7};
      s.class_embeddings = &f.embeddings;
      note("total", testing::gradcheck_objective(f.pair, f.batch, s).max_relative_error);
    }
  }

  Outcome o;
  o.pass = true;
  std::string worst_name;
  double worst_err = 0.0;
  for (const auto& [name, e] : worst) {
    if (!(e < kTol)) o.pass = false;
    if (e >= worst_err) {
      worst_err = e;
      worst_name = name;
    }
  }
  o.detail = fmt("%zu gradients x %d seeds, worst %.2e (%s)", worst.size(), kSeeds, worst_err, worst_name.c_str());
  return o;
}

// ------------------------------------------------------------------ 2

Outcome ema_closed_form() {
  const auto arch = testing::tiny_architecture();
  double worst = 0.0;
  int cases = 0;
  for (double gamma : {0.0, 0.95, 0.996, 1.0})
    for (int n : {1, 10, 1000}) {
      auto pair = model::TeacherStudentPair::from_student(model::ModelStack(arch, 7), gamma);
      pair.teacher = model::ModelStack(arch, 8);
      const auto t0 = pair.teacher.parameters();
      for (int i = 0; i < n; ++i) model::ema_update(pair, gamma);
      const double gn = std::pow(gamma, n);
      for (std::size_t i = 0; i < t0.size(); ++i) {
        if (t0.items()[i].buffer) continue;
        const Matrix& s = pair.student.parameters().items()[i].value;
        const Matrix expect = s + gn * (t0.items()[i].value - s);
        worst = std::max(worst, (pair.teacher.parameters().items()[i].value - expect).cwiseAbs().maxCoeff());
      }
      ++cases;
    }
  return {worst <= 1e-12, fmt("%d (gamma, n) cases, max deviation %.2e", cases, worst)};
}

// ------------------------------------------------------------------ 3

Outcome aggregation_oracles() {
  using loss::AggregationStrategy;
  Rng rng(3);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int k = 2 + static_cast<int>(rng.below(8));
    const auto s = random_dists(1 + static_cast<int>(rng.below(8)), k, rng);
    const auto te = random_dists(1 + static_cast<int>(rng.below(4)), k, rng);
    double acc = 0.0;
    for (const auto& sj : s)
      for (const auto& ti : te) acc += testing::ce_oracle(ti, sj);
    acc /= static_cast<double>(s.size() * te.size());
    worst = std::max(worst, std::abs(loss::multicrop_pl_loss(s, te, AggregationStrategy::PairwiseAverageSoft) - acc));
  }

  bool single_equal = true;
  for (int t = 0; t < 100; ++t) {
    const auto s = random_dists(6, 5, rng);
    const auto te = random_dists(1, 5, rng);
    single_equal = single_equal && loss::multicrop_pl_loss(s, te, AggregationStrategy::PairwiseAverageSoft) ==
                                       loss::multicrop_pl_loss(s, te, AggregationStrategy::SingleAverageSoft);
  }

  bool one_hot_equal = true;
  for (int t = 0; t < 100; ++t) {
    const auto s = random_dists(6, 5, rng);
    std::vector<Distribution> te;
    for (int i = 0; i < 3; ++i) te.push_back(testing::one_hot(5, static_cast<int>(rng.below(5))));
    one_hot_equal = one_hot_equal && loss::multicrop_pl_loss(s, te, AggregationStrategy::PairwiseAverageSoft) ==
                                         loss::multicrop_pl_loss(s, te, AggregationStrategy::PairwiseAverageHard);
    const std::vector<Distribution> agree(2, testing::one_hot(5, static_cast<int>(rng.below(5))));
    one_hot_equal = one_hot_equal && loss::multicrop_pl_loss(s, agree, AggregationStrategy::SingleAverageSoft) ==
                                         loss::multicrop_pl_loss(s, agree, AggregationStrategy::SingleAverageHard);
  }
  return {worst <= 1e-10 && single_equal && one_hot_equal,
          fmt("pairwise vs enumeration %.2e, |T|=1 identical %s, one-hot soft==hard %s", worst,
              single_equal ? "yes" : "no", one_hot_equal ? "yes" : "no")};
}

// ------------------------------------------------------------------ 4

struct StrategyRuns {
  std::vector<double> pairwise_soft, single_hard;
  double seconds = 0.0;
};

const StrategyRuns& strategy_runs(const fs::path& work) {
  static std::optional<StrategyRuns> cached;
  if (cached) return *cached;
  StrategyRuns r;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const fs::path dir = work / "strategies" / ("seed" + std::to_string(seed));
    RunConfig syn = stage_config(Stage::Synth, seed, dir / "synth");
    syn.shots = 2;
    train::run_stage(syn);

    for (auto strategy : {loss::AggregationStrategy::PairwiseAverageSoft, loss::AggregationStrategy::SingleAverageHard}) {
      const bool pairwise = strategy == loss::AggregationStrategy::PairwiseAverageSoft;
      RunConfig c = stage_config(Stage::Transfer, seed, dir / (pairwise ? "pairwise_soft" : "single_hard"));
      c.data_root = (dir / "synth" / "data").string();
      c.embeddings = (dir / "synth" / "embeddings.txt").string();
      c.epochs = 5;
      c.lr = 1e-3;
      c.weights = {0, 1, 1, 1};
      c.strategy = strategy;
      const auto rep = train::run_stage(c);
      (pairwise ? r.pairwise_soft : r.single_hard).push_back(rep.metrics.at("softmax_accuracy"));

    }
  }
  r.seconds = seconds_since(t0);
  cached = r;
  return *cached;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

Outcome strategy_ordering(const fs::path& work) {
  const auto& r = strategy_runs(work);
  const double a = mean(r.pairwise_soft), b = mean(r.single_hard);
  return {a >= b && r.seconds < 15 * 60,
          fmt("pairwise average soft %.4f vs single average hard %.4f over 5 seeds, %.0f s", a, b, r.seconds)};
}

// ------------------------------------------------------------------ 5

Outcome disagreement(const fs::path& work) {
  // dog, dog, dog, cat, squirrel, mouse
  const std::vector<int> example = {0, 0, 0, 1, 2, 3};
  const double unit = eval::disagreement_rate(example);
  std::vector<double> dual, single;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const fs::path dir = work / "disagreement" / ("seed" + std::to_string(seed));
    RunConfig syn = stage_config(Stage::Synth, seed, dir / "synth");
    syn.synth_per_class = 100;
    syn.shots = 50;
    train::run_stage(syn);
    RunConfig t = stage_config(Stage::Transfer, seed, dir / "transfer");
    t.data_root = (dir / "synth" / "data").string();
    t.epochs = 10;
    t.lr = 1e-3;
    t.labelled_batch = 32;
    t.momentum_start = 0.95;
    t.weights = {0, 0, 0, 1};
    const auto rep = train::run_stage(t);
    RunConfig a = stage_config(Stage::Analyze, seed, dir / "analyze");
    a.data_root = t.data_root;
    a.init_checkpoint = rep.checkpoint.string();
    const auto an = train::run_stage(a);
    dual.push_back(an.metrics.at("dual_disagreement"));
    single.push_back(an.metrics.at("single_disagreement"));
  }
  const double d = mean(dual), s = mean(single);
  return {d > s && unit == 4.0 / 6.0, fmt("dual %.4f vs single %.4f over 5 seeds, example %.3f", d, s, unit)};
}

// ------------------------------------------------------------------ 6

Outcome adaptation_benefit(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> none, slow, fast;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const fs::path dir = work / "adaptation" / ("seed" + std::to_string(seed));
    RunConfig src = stage_config(Stage::Synth, seed, dir / "source");
    src.synth_per_class = 60;
    train::run_stage(src);
    RunConfig tgt = stage_config(Stage::Synth, seed + 100, dir / "target");
    tgt.synth_per_class = 60;
    tgt.synth_style = "target";
    tgt.shots = 10;
    train::run_stage(tgt);

    RunConfig pre = stage_config(Stage::Pretrain, seed, dir / "pretrain");
    pre.data_root = (dir / "source" / "data").string();
    pre.epochs = 10;
    pre.warmup_epochs = 1;
    pre.tau_teacher_warmup_epochs = 3;
    pre.semantic_epochs = 0;
    pre.crops.n_small_student = 4;
    const auto pre_rep = train::run_stage(pre);

    auto knn = [&](const fs::path& ckpt, const std::string& name) {
      RunConfig e = stage_config(Stage::Eval, seed, dir / name);
      e.data_root = (dir / "target" / "data").string();
      e.init_checkpoint = ckpt.string();
      return train::run_stage(e).metrics.at("knn_accuracy");
    };
    none.push_back(knn(pre_rep.checkpoint, "eval_none"));

    for (double gamma : {0.996, 0.95}) {
      const std::string tag = gamma == 0.95 ? "095" : "0996";
      RunConfig ad = stage_config(Stage::Adapt, seed, dir / ("adapt_" + tag));
      ad.data_root = (dir / "target" / "data").string();
      ad.init_checkpoint = pre_rep.checkpoint.string();
      ad.epochs = 5;
      ad.momentum_start = gamma;
      ad.momentum_end = gamma;
      ad.crops.n_small_student = 4;
      const auto rep = train::run_stage(ad);
      (gamma == 0.95 ? fast : slow).push_back(knn(rep.checkpoint, "eval_" + tag));
    }
  }
  const double secs = seconds_since(t0);
  const double a = mean(fast), b = mean(slow), c = mean(none);
  return {a >= b && b >= c && secs < 10 * 60,
          fmt("KNN gamma 0.95 %.4f, gamma 0.996 %.4f, no adaptation %.4f over 5 seeds, %.0f s", a, b, c, secs)};
}

// ------------------------------------------------------------------ 7

Outcome loss_ablation(const fs::path& work) {
  const fs::path dir = work / "ablation";
  RunConfig syn = stage_config(Stage::Synth, 0, dir / "synth");
  syn.synth_per_class = 100;
  syn.shots = 50;
  syn.synth_siblings = 5;
  train::run_stage(syn);

  auto run = [&](const std::string& name, loss::LossWeights w) {
    RunConfig t = stage_config(Stage::Transfer, 0, dir / name);
    t.data_root = (dir / "synth" / "data").string();
    t.embeddings = (dir / "synth" / "embeddings.txt").string();
    t.epochs = 10;
    t.lr = 1e-3;
    t.labelled_batch = 32;
    t.momentum_start = 0.95;
    t.weights = w;
    const auto rep = train::run_stage(t);
    RunConfig e = stage_config(Stage::Episodes, 0, dir / (name + "_episodes"));
    e.data_root = (dir / "synth" / "heldout").string();
    e.embeddings = t.embeddings;
    e.init_checkpoint = rep.checkpoint.string();
    e.weights = w;
    e.n_episodes = 20;
    e.min_ways = 5;
    e.max_ways = 5;
    return train::run_stage(e).metrics;
  };
  const auto sem = run("semantic_pl", {0, 1, 1, 0});
  const auto cls = run("classification_pl", {0, 0, 1, 1});
  const double a = sem.at("mean_accuracy"), b = cls.at("mean_accuracy");
  const double zs = sem.at("mean_semantic_accuracy"), chance = sem.at("mean_chance");
  return {a > b && zs >= 2.0 * chance,
          fmt("semantic+PL %.4f vs classification+PL %.4f over 20 episodes, semantic %.4f vs chance %.4f", a, b, zs,
              chance)};
}

// ------------------------------------------------------------------ 8

Outcome config_contract() {
  const fs::path dir = LAVA_CONFIG_DIR;
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  auto check_crops = [&](const RunConfig& c, const std::string& where) {
    expect(c.crops.global_scale.lo == 0.4 && c.crops.global_scale.hi == 1.0, where + " global scale");
    expect(c.crops.local_scale.lo == 0.05 && c.crops.local_scale.hi == 0.4, where + " local scale");
  };

  for (bool shipped : {false, true}) {
    auto load = [&](Stage s, const char* file) {
      return shipped ? train::load_run_config(s, dir / file) : train::defaults_for(s);
    };
    const std::string tag = shipped ? "file " : "default ";
    const auto pre = load(Stage::Pretrain, "pretrain.conf");
    const auto ad = load(Stage::Adapt, "adapt.conf");
    const auto tr = load(Stage::Transfer, "transfer.conf");
    const auto ev = load(Stage::Eval, "eval.conf");
    const auto ep = load(Stage::Episodes, "episodes.conf");

    expect(tr.eta == 0.4 && pre.eta == 0.4 && ep.eta == 0.4, tag + "eta");
    expect(tr.tau_student == 0.1 && pre.tau_student == 0.1 && ad.tau_student == 0.1, tag + "student temperature");
    expect(tr.tau_teacher == 0.04 && tr.tau_teacher_warmup_epochs == 0, tag + "transfer teacher temperature");
    expect(pre.tau_teacher == 0.07 && pre.tau_teacher_warmup_start == 0.04 && pre.tau_teacher_warmup_epochs > 0,
           tag + "pretrain teacher temperature");
    expect(pre.momentum_start == 0.996, tag + "pretrain momentum");
    expect(ad.momentum_start == 0.95, tag + "adapt momentum");
    expect(tr.momentum_start == 0.99, tag + "transfer momentum");
    check_crops(tr, tag + "transfer");
    check_crops(pre, tag + "pretrain");
    check_crops(ad, tag + "adapt");
    expect(tr.crops.n_small_student == 6 && tr.crops.n_small_teacher == 0 && tr.crops.n_large_student == 2 &&
               tr.crops.n_large_teacher == 2,
           tag + "crop counts");
    expect(tr.knn_k == 20 && ev.knn_k == 20, tag + "K");
    expect(ep.n_episodes == 600, tag + "episode count");
    expect(ep.ci_multiplier == 1.96, tag + "CI multiplier");
  }
  std::string detail = failures.empty() ? "defaults and shipped configs agree with the protocol constants" : "mismatch:";
  for (const auto& f : failures) detail += " [" + f + "]";
  return {failures.empty(), detail};
}

// ------------------------------------------------------------------ 9

std::map<std::string, std::string> pipeline_outputs(const fs::path& dir) {
  fs::remove_all(dir);
  RunConfig syn = stage_config(Stage::Synth, 5, dir / "synth");
  syn.synth_per_class = 12;
  syn.synth_validation_per_class = 3;
  syn.shots = 2;
  train::run_stage(syn);
  RunConfig tgt = stage_config(Stage::Synth, 6, dir / "target");
  tgt.synth_per_class = 12;
  tgt.synth_validation_per_class = 3;
  tgt.synth_style = "target";
  train::run_stage(tgt);
  const std::string data = (dir / "synth" / "data").string(), emb = (dir / "synth" / "embeddings.txt").string();

  RunConfig pre = stage_config(Stage::Pretrain, 5, dir / "pretrain");
  pre.data_root = data;
  pre.embeddings = emb;
  pre.epochs = 2;
  pre.warmup_epochs = 1;
  pre.semantic_epochs = 1;
  const auto p = train::run_stage(pre);

  RunConfig ad = stage_config(Stage::Adapt, 5, dir / "adapt");
  ad.data_root = (dir / "target" / "data").string();
  ad.init_checkpoint = p.checkpoint.string();
  ad.epochs = 2;
  const auto a = train::run_stage(ad);

  RunConfig tr = stage_config(Stage::Transfer, 5, dir / "transfer");
  tr.data_root = data;
  tr.embeddings = emb;
  tr.init_checkpoint = a.checkpoint.string();
  tr.epochs = 2;
  const auto t = train::run_stage(tr);

  RunConfig ev = stage_config(Stage::Eval, 5, dir / "eval");
  ev.data_root = data;
  ev.embeddings = emb;
  ev.init_checkpoint = t.checkpoint.string();
  train::run_stage(ev);

  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (!e.is_regular_file() || (ext != ".ckpt" && ext != ".csv")) continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), dir).string()] =
        std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return files;
}

Outcome determinism(const fs::path& work) {
  const auto a = pipeline_outputs(work / "determinism" / "a");
  const auto b = pipeline_outputs(work / "determinism" / "b");
  std::vector<std::string> differ;
  std::size_t checkpoints = 0, logs = 0;
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != bytes) differ.push_back(name);
    (name.ends_with(".ckpt") ? checkpoints : logs) += 1;
  }
  if (a.size() != b.size()) differ.push_back("file sets");
  std::string detail = fmt("%zu checkpoints and %zu CSV logs compared", checkpoints, logs);
  for (const auto& d : differ) detail += ", differs: " + d;
  return {differ.empty() && checkpoints >= 4, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory for experiment runs");
  app.add_option("--only", only, "criterion numbers to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const fs::path dir = fs::absolute(work);
  fs::create_directories(dir);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient suite", [] { return gradient_suite(); }},
      {"EMA closed form", [] { return ema_closed_form(); }},
      {"aggregation oracles", [] { return aggregation_oracles(); }},
      {"strategy ordering", [&] { return strategy_ordering(dir); }},
      {"disagreement analysis", [&] { return disagreement(dir); }},
      {"adaptation benefit", [&] { return adaptation_benefit(dir); }},
      {"loss ablation", [&] { return loss_ablation(dir); }},
      {"config contract", [] { return config_contract(); }},
      {"determinism", [&] { return determinism(dir); }},
  };

  const std::set<int> wanted(only.begin(), only.end());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted.empty() && !wanted.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("criterion %d (%s): %s  %s  [%.1f s]\n", id, criteria[i].first, o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
