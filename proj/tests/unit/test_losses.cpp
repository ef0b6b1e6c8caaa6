// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lava/errors.hpp"
#include "lava/losses/losses.hpp"
#include "lava/losses/objective.hpp"
#include "lava/model/softmax.hpp"
#include "test_support.hpp"

using namespace lava;
using namespace lava::loss;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

std::vector<Distribution> random_dists(int n, int k, Rng& rng) {
  std::vector<Distribution> out;
  for (int i = 0; i < n; ++i) out.push_back(testing::random_distribution(k, rng));
  return out;
}

// Brute-force pair enumeration.
double pairwise_oracle(const std::vector<Distribution>& s, const std::vector<Distribution>& t) {
  double acc = 0.0;
  int pairs = 0;
  for (const auto& sj : s)
    for (const auto& ti : t) {
      acc += testing::ce_oracle(ti, sj);
      ++pairs;
    }
  return acc / pairs;
}

}  // namespace

TEST_CASE("hinge loss examples") {
  CHECK(semantic_hinge_loss(vec({1, 0}), vec({1, 0}), vec({0, 1}), 0.4) == 0.0);
  CHECK(semantic_hinge_loss(vec({1, 0}), vec({0, 1}), vec({1, 0}), 0.4) == doctest::Approx(1.4).epsilon(1e-15));
  const double s3 = std::sqrt(3.0) / 2.0;
  const double expect = 0.4 - 0.5 + s3;  // cosines evaluated by hand
  CHECK(semantic_hinge_loss(vec({1, 0}), vec({0.5, s3}), vec({s3, 0.5}), 0.4) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(expect == doctest::Approx(0.766).epsilon(1e-3));
}

TEST_CASE("hinge loss errors and range") {
  CHECK_THROWS_AS(semantic_hinge_loss(vec({0, 0}), vec({1, 0}), vec({0, 1}), 0.4), NumericError);
  CHECK_THROWS_AS(semantic_hinge_loss(vec({1, 0}), vec({1, 0}), vec({0, 1}), 0.0), DomainError);
  Rng rng(1);
  for (int t = 0; t < 500; ++t) {
    Vector m(4), a(4), b(4);
    for (int i = 0; i < 4; ++i) {
      m[i] = rng.normal();
      a[i] = rng.normal();
      b[i] = rng.normal();
    }
    a.normalize();
    b.normalize();
    const double eta = rng.uniform(0.01, 1.0);
    const double l = semantic_hinge_loss(m, a, b, eta);
    CHECK(l >= 0.0);
    CHECK(l <= 2.0 + eta);
    const double gap = m.normalized().dot(a) - m.normalized().dot(b);
    if (gap >= eta) CHECK(l == 0.0);
    // Positive rescaling of m leaves cosine terms unchanged.
    CHECK(semantic_hinge_loss(Vector(m * 3.7), a, b, eta) == doctest::Approx(l).epsilon(1e-12));
  }
}

TEST_CASE("hinge gradient matches finite differences") {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    Vector m(5), a(5), b(5);
    for (int i = 0; i < 5; ++i) {
      m[i] = rng.normal();
      a[i] = rng.normal();
      b[i] = rng.normal();
    }
    a.normalize();
    b.normalize();
    const auto r = semantic_hinge_loss_grad(m, a, b, 1.5);
    for (int i = 0; i < 5; ++i) {
      Vector up = m, dn = m;
      up[i] += 1e-6;
      dn[i] -= 1e-6;
      const double num = (semantic_hinge_loss(up, a, b, 1.5) - semantic_hinge_loss(dn, a, b, 1.5)) / 2e-6;
      CHECK(r.grad_m[i] == doctest::Approx(num).epsilon(1e-5));
    }
  }
}

TEST_CASE("cross entropy examples") {
  CHECK(cross_entropy(testing::one_hot(3, 1), testing::one_hot(3, 1)) == 0.0);
  CHECK(cross_entropy(Vector::Constant(4, 0.25), Vector::Constant(4, 0.25)) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const auto pt = testing::random_distribution(5, rng);
    const auto ps = testing::random_distribution(5, rng);
    CHECK(std::abs(cross_entropy(pt, ps) - testing::ce_oracle(pt, ps)) < 1e-10);
    // Gibbs: CE >= H, equality at ps == pt.
    CHECK(cross_entropy(pt, ps) >= cross_entropy(pt, pt) - 1e-12);
  }
  CHECK_THROWS_AS(cross_entropy(Vector::Constant(3, 1.0 / 3), Vector::Constant(2, 0.5)), ContractError);
  // One-hot mismatch stays finite thanks to the log floor.
  CHECK(std::isfinite(cross_entropy(testing::one_hot(2, 0), testing::one_hot(2, 1))));
}

TEST_CASE("aggregate teacher") {
  std::vector<Distribution> two = {testing::one_hot(4, 0), testing::one_hot(4, 1)};
  const auto soft = std::get<Distribution>(aggregate_teacher(two, AggregationStrategy::SingleAverageSoft));
  CHECK(soft.isApprox(vec({0.5, 0.5, 0, 0})));
  // Tie between 0 and 1 resolves to the smaller index.
  CHECK(std::get<int>(aggregate_teacher(two, AggregationStrategy::SingleAverageHard)) == 0);
  CHECK(std::get<int>(aggregate_teacher(two, AggregationStrategy::SingleMajorityHard)) == 0);

  std::vector<Distribution> votes = {testing::one_hot(3, 2), testing::one_hot(3, 2), testing::one_hot(3, 1)};
  CHECK(std::get<int>(aggregate_teacher(votes, AggregationStrategy::SingleMajorityHard)) == 2);

  Rng rng(4);
  std::vector<Distribution> single = {testing::random_distribution(6, rng)};
  CHECK(std::get<Distribution>(aggregate_teacher(single, AggregationStrategy::SingleAverageSoft)) == single[0]);
  CHECK(std::holds_alternative<Passthrough>(aggregate_teacher(single, AggregationStrategy::PairwiseAverageSoft)));
  CHECK(std::holds_alternative<Passthrough>(aggregate_teacher(single, AggregationStrategy::PairwiseAverageHard)));
  CHECK_THROWS_AS(aggregate_teacher(std::vector<Distribution>{}, AggregationStrategy::SingleAverageSoft), DomainError);
}

TEST_CASE("strategy names parse verbatim") {
  for (auto s : kAllStrategies) CHECK(parse_strategy(to_string(s)) == s);
  CHECK(parse_strategy("pair-wise average soft") == AggregationStrategy::PairwiseAverageSoft);
  CHECK(parse_strategy("single majority hard") == AggregationStrategy::SingleMajorityHard);
  CHECK(parse_strategy("pairwise_average_hard") == AggregationStrategy::PairwiseAverageHard);
  CHECK_THROWS_AS(parse_strategy("median vote"), ConfigError);
}

TEST_CASE("multicrop pseudo-label loss") {
  Rng rng(5);
  SUBCASE("pair-wise soft equals brute-force enumeration") {
    for (int t = 0; t < 100; ++t) {
      const auto s = random_dists(8, 7, rng);
      const auto te = random_dists(2, 7, rng);
      CHECK(std::abs(multicrop_pl_loss(s, te, AggregationStrategy::PairwiseAverageSoft) - pairwise_oracle(s, te)) < 1e-10);
    }
  }
  SUBCASE("single teacher crop: pair-wise soft equals single soft") {
    const auto s = random_dists(6, 5, rng);
    const auto te = random_dists(1, 5, rng);
    CHECK(multicrop_pl_loss(s, te, AggregationStrategy::PairwiseAverageSoft) ==
          multicrop_pl_loss(s, te, AggregationStrategy::SingleAverageSoft));
  }
  SUBCASE("one-hot teachers: soft equals hard") {
    const auto s = random_dists(6, 5, rng);
    std::vector<Distribution> te = {testing::one_hot(5, 1), testing::one_hot(5, 3)};
    CHECK(multicrop_pl_loss(s, te, AggregationStrategy::PairwiseAverageSoft) ==
          multicrop_pl_loss(s, te, AggregationStrategy::PairwiseAverageHard));
  }
  SUBCASE("lower bound by mean teacher entropy") {
    for (int t = 0; t < 50; ++t) {
      const auto s = random_dists(4, 5, rng);
      const auto te = random_dists(2, 5, rng);
      double h = 0.0;
      for (const auto& d : te) h += cross_entropy(d, d);
      h /= 2.0;
      CHECK(multicrop_pl_loss(s, te, AggregationStrategy::PairwiseAverageSoft) >= h);
    }
    const auto d = testing::random_distribution(5, rng);
    std::vector<Distribution> same = {d, d};
    CHECK(multicrop_pl_loss(same, same, AggregationStrategy::PairwiseAverageSoft) ==
          doctest::Approx(cross_entropy(d, d)).epsilon(1e-14));
  }
  SUBCASE("permutation invariance for every strategy") {
    for (auto strat : kAllStrategies)
      for (int t = 0; t < 20; ++t) {
        auto s = random_dists(6, 4, rng);
        auto te = random_dists(3, 4, rng);
        const double base = multicrop_pl_loss(s, te, strat);
        rng.shuffle(s.begin(), s.end());
        rng.shuffle(te.begin(), te.end());
        CHECK(multicrop_pl_loss(s, te, strat) == doctest::Approx(base).epsilon(1e-12));
      }
  }
  SUBCASE("hard strategies use the aggregated one-hot") {
    const auto s = random_dists(3, 4, rng);
    std::vector<Distribution> te = {vec({0.5, 0.3, 0.1, 0.1}), vec({0.1, 0.6, 0.2, 0.1}), vec({0.1, 0.5, 0.3, 0.1})};
    double oracle = 0.0;
    for (const auto& sj : s) oracle += testing::ce_oracle(testing::one_hot(4, 1), sj);
    CHECK(multicrop_pl_loss(s, te, AggregationStrategy::SingleMajorityHard) == doctest::Approx(oracle / 3).epsilon(1e-12));
    CHECK(multicrop_pl_loss(s, te, AggregationStrategy::SingleAverageHard) == doctest::Approx(oracle / 3).epsilon(1e-12));
  }
  CHECK_THROWS_AS(multicrop_pl_loss({}, random_dists(1, 3, rng), AggregationStrategy::PairwiseAverageSoft), DomainError);
  CHECK_THROWS_AS(multicrop_pl_loss(random_dists(1, 3, rng), {}, AggregationStrategy::PairwiseAverageSoft), DomainError);
}

TEST_CASE("logit form of the pseudo-label loss matches the distribution form") {
  Rng rng(6);
  for (auto strat : kAllStrategies) {
    Matrix logits(5, 6);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = rng.normal();
    const auto te = random_dists(2, 6, rng);
    std::vector<Distribution> s;
    for (Eigen::Index r = 0; r < 5; ++r) s.push_back(testing::softmax_oracle(logits.row(r).transpose(), 0.1));
    const auto g = multicrop_pl_loss_grad(logits, 0.1, te, strat);
    CHECK(g.loss == doctest::Approx(multicrop_pl_loss(s, te, strat)).epsilon(1e-12));
  }
}

TEST_CASE("self-distillation loss") {
  Rng rng(7);
  Matrix l(1, 5);
  for (int k = 0; k < 5; ++k) l(0, k) = rng.normal();
  const std::vector<int> sc = {0}, tc = {1};
  const Distribution p = testing::softmax_oracle(l.row(0).transpose(), 0.1);
  const double entropy = testing::ce_oracle(p, p);
  CHECK(self_distillation_loss(l, sc, l, tc, 0.1, 0.1, Vector::Zero(5)) == doctest::Approx(entropy).epsilon(1e-12));
  // A constant center shift does not change the teacher distribution.
  CHECK(self_distillation_loss(l, sc, l, tc, 0.1, 0.1, Vector::Constant(5, 3.0)) ==
        doctest::Approx(entropy).epsilon(1e-12));
  // Same crop id on both sides is not a valid pair.
  CHECK_THROWS_AS(self_distillation_loss(l, sc, l, sc, 0.1, 0.1, Vector::Zero(5)), DomainError);

  for (int t = 0; t < 30; ++t) {
    Matrix s(4, 6), te(2, 6);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < te.size(); ++i) te.data()[i] = rng.normal();
    Vector center(6);
    for (int k = 0; k < 6; ++k) center[k] = rng.normal();
    const std::vector<int> scs = {0, 1, 2, 3}, tcs = {0, 1};
    double oracle = 0.0;
    int pairs = 0;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 4; ++j) {
        if (tcs[static_cast<std::size_t>(i)] == scs[static_cast<std::size_t>(j)]) continue;
        oracle += testing::ce_oracle(testing::softmax_oracle(te.row(i).transpose() - center, 0.04),
                                     testing::softmax_oracle(s.row(j).transpose(), 0.1));
        ++pairs;
      }
    CHECK(std::abs(self_distillation_loss(s, scs, te, tcs, 0.1, 0.04, center) - oracle / pairs) < 1e-10);
  }
}

TEST_CASE("loss weight validation") {
  CHECK_THROWS_AS((LossWeights{0, 0, 0, 0}).validate(), ConfigError);
  CHECK_THROWS_AS((LossWeights{-1, 1, 0, 0}).validate(), ConfigError);
  CHECK_NOTHROW((LossWeights{0, 1, 1, 0}).validate());
}

namespace {

struct Fixture {
  model::TeacherStudentPair pair;
  std::vector<BatchItem> batch;
  Matrix embeddings;
};

// Small stack, a mixed batch of labelled and unlabelled images.
Fixture make_fixture(std::uint64_t seed, bool share_large = false) {
  Rng rng(seed);
  Fixture f;
  const auto arch = testing::tiny_architecture();
  f.pair = model::TeacherStudentPair::from_student(model::ModelStack(arch, seed), 0.99);
  f.pair.teacher = model::ModelStack(arch, seed + 1000);
  for (int k = 0; k < arch.ssl_dim; ++k) f.pair.center[k] = 0.1 * rng.normal();
  f.embeddings = Matrix(arch.num_classes, arch.semantic_dim);
  for (Eigen::Index i = 0; i < f.embeddings.size(); ++i) f.embeddings.data()[i] = rng.normal();
  f.embeddings.rowwise().normalize();

  views::CropConfig crops;
  crops.n_small_student = 2;
  crops.n_large_student = 2;
  crops.n_large_teacher = 2;
  crops.large_out_size = 4;
  crops.small_out_size = 2;
  crops.share_large_crops = share_large;
  for (std::size_t i = 0; i < 4; ++i) {
    BatchItem item;
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

}  // namespace

TEST_CASE("total loss term isolation") {
  auto f = make_fixture(11);
  ObjectiveSettings s;
  s.class_embeddings = &f.embeddings;

  s.weights = {0, 1, 0, 0};
  auto labelled_only = f.batch;
  std::erase_if(labelled_only, [](const BatchItem& b) { return !b.label; });
  const auto r_sem = evaluate_objective(f.pair, labelled_only, s);
  // Semantic term recomputed through the batch hinge helper on student large views.
  double oracle = 0.0;
  for (const auto& item : labelled_only) {
    std::vector<const views::Image*> imgs;
    for (const auto& v : item.views.student)
      if (v.meta.large) imgs.push_back(&v.image);
    const auto out = f.pair.student.forward(imgs);
    std::vector<int> truth(imgs.size(), *item.label), neg(imgs.size(), *item.negative);
    oracle += semantic_hinge_loss_batch(out.m, truth, neg, f.embeddings, 0.4);
  }
  oracle /= static_cast<double>(labelled_only.size());
  CHECK(r_sem.losses.total == doctest::Approx(oracle).epsilon(1e-12));

  s.weights = {0, 0, 1, 0};
  auto unlabelled_only = f.batch;
  std::erase_if(unlabelled_only, [](const BatchItem& b) { return b.label.has_value(); });
  const auto r_pl = evaluate_objective(f.pair, unlabelled_only, s);
  double pl = 0.0;
  for (const auto& item : unlabelled_only) {
    std::vector<Distribution> sd, td;
    for (const auto& v : item.views.student)
      sd.push_back(testing::softmax_oracle(model::forward(f.pair.student, v.image, 1.0).p.array().log().matrix(), 0.1));
    for (const auto& v : item.views.teacher)
      td.push_back(testing::softmax_oracle(model::forward(f.pair.teacher, v.image, 1.0).p.array().log().matrix(), 0.04));
    pl += multicrop_pl_loss(sd, td, AggregationStrategy::PairwiseAverageSoft);
  }
  CHECK(r_pl.losses.total == doctest::Approx(pl / unlabelled_only.size()).epsilon(1e-9));

  s.weights = {0, 1, 1, 0};
  const auto mixed = evaluate_objective(f.pair, f.batch, s);
  s.weights = {0, 1, 0, 0};
  const double sem_only = evaluate_objective(f.pair, f.batch, s).losses.total;
  s.weights = {0, 0, 1, 0};
  const double pl_only = evaluate_objective(f.pair, f.batch, s).losses.total;
  CHECK(std::abs(mixed.losses.total - (sem_only + pl_only)) < 1e-10);

  s.weights = {0, 0, 0, 0};
  CHECK_THROWS_AS(evaluate_objective(f.pair, f.batch, s), ConfigError);
}

TEST_CASE("objective gradients match finite differences") {
  const std::vector<std::pair<const char*, LossWeights>> configs = {
      {"semantic", {0, 1, 0, 0}}, {"pseudo-label", {0, 0, 1, 0}}, {"ssl", {1, 0, 0, 0}},
      {"classification", {0, 0, 0, 1}}, {"total", {0.5, 1, 1, 0.7}}};
  for (std::uint64_t seed = 1; seed <= 3; ++seed)
    for (const auto& [name, weights] : configs) {
      auto f = make_fixture(seed, std::string(name) == "ssl");
      ObjectiveSettings s;
      s.weights = weights;
      s.class_embeddings = &f.embeddings;
      const auto report = testing::gradcheck_objective(f.pair, f.batch, s);
      INFO(name << " seed " << seed << " worst " << report.worst_parameter);
      CHECK(report.max_relative_error < 1e-4);
    }
}

TEST_CASE("frozen groups receive no gradient and the teacher is never written") {
  auto f = make_fixture(4);
  ObjectiveSettings s;
  s.weights = {1, 1, 1, 1};
  s.class_embeddings = &f.embeddings;
  s.trainable = model::Trainable::only_semantic();
  f.pair.student.parameters().zero_grad();
  const auto teacher_before = f.pair.teacher.parameters();
  objective_with_gradients(f.pair, f.batch, s);
  for (const auto& p : f.pair.student.parameters().items()) {
    if (p.group == model::Group::Semantic) continue;
    CHECK(p.grad.cwiseAbs().maxCoeff() == 0.0);
  }
  for (std::size_t i = 0; i < teacher_before.size(); ++i) {
    CHECK(f.pair.teacher.parameters().items()[i].grad.cwiseAbs().maxCoeff() == 0.0);
    CHECK(f.pair.teacher.parameters().items()[i].value == teacher_before.items()[i].value);
  }
}
