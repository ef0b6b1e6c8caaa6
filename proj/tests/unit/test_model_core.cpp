// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "lava/errors.hpp"
#include "lava/model/checkpoint.hpp"
#include "lava/model/model_stack.hpp"
#include "lava/model/schedule.hpp"
#include "lava/model/softmax.hpp"
#include "lava/model/teacher_student.hpp"
#include "test_support.hpp"

using namespace lava;
using namespace lava::model;

TEST_CASE("temperature softmax examples") {
  CHECK(temperature_softmax(Vector::Zero(2), 0.1).isApprox(Vector::Constant(2, 0.5)));
  CHECK(temperature_softmax(Vector::Ones(3), 0.04).isApprox(Vector::Constant(3, 1.0 / 3.0)));

  Vector l(3);
  l << 3, 1, 0;
  // Independent closed form of softmax(6, 2, 0).
  const double z = std::exp(6.0) + std::exp(2.0) + std::exp(0.0);
  const Distribution p = temperature_softmax(l, 0.5);
  CHECK(p[0] == doctest::Approx(std::exp(6.0) / z).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-12));
  CHECK(p[2] == doctest::Approx(1.0 / z).epsilon(1e-12));
}

TEST_CASE("temperature softmax errors") {
  CHECK_THROWS_AS(temperature_softmax(Vector::Zero(2), 0.0), DomainError);
  CHECK_THROWS_AS(temperature_softmax(Vector::Zero(2), -1.0), DomainError);
  Vector bad(2);
  bad << 1.0, std::nan("");
  CHECK_THROWS_AS(temperature_softmax(bad, 1.0), NumericError);
  bad << 1.0, INFINITY;
  CHECK_THROWS_AS(temperature_softmax(bad, 1.0), NumericError);
}

TEST_CASE("temperature softmax properties") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(10));
    Vector l(k);
    for (int i = 0; i < k; ++i) l[i] = rng.uniform(-5, 5);
    const double tau = rng.uniform(0.02, 2.0);
    const Distribution p = temperature_softmax(l, tau);
    CHECK(p.minCoeff() > 0.0);
    CHECK(std::abs(p.sum() - 1.0) < 1e-6);
    // Dividing first is the same computation.
    const Distribution q = temperature_softmax(Vector(l / tau), 1.0);
    CHECK((p - q).cwiseAbs().maxCoeff() == 0.0);
    const Distribution shifted = temperature_softmax(Vector(l.array() + rng.uniform(-50, 50)), tau);
    CHECK((p - shifted).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((p - testing::softmax_oracle(l, tau)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("forward output shapes and determinism") {
  Architecture a;
  ModelStack stack(a, 11);
  Rng rng(3);
  const auto large = testing::random_image(3, 32, 32, rng);
  const auto small = testing::random_image(3, 16, 16, rng);
  for (const auto* img : {&large, &small}) {
    const auto r1 = forward(stack, *img, 0.1);
    const auto r2 = forward(stack, *img, 0.1);
    CHECK(r1.z.size() == a.feature_dim);
    CHECK(r1.q.size() == a.projection_dim);
    CHECK(r1.m.size() == a.semantic_dim);
    CHECK(r1.p.size() == a.num_classes);
    CHECK(r1.ssl_logits.size() == a.ssl_dim);
    CHECK(r1.z == r2.z);
    CHECK(r1.p == r2.p);
    CHECK(r1.m == r2.m);
    CHECK(r1.ssl_logits == r2.ssl_logits);
  }
}

TEST_CASE("batched forward equals per-image forward") {
  ModelStack stack(testing::tiny_architecture(), 5);
  Rng rng(9);
  std::vector<views::Image> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(testing::random_image(3, 4, 4, rng));
  std::vector<const views::Image*> ptrs;
  for (const auto& im : imgs) ptrs.push_back(&im);
  const auto batch = stack.forward(ptrs);
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    const views::Image* one[] = {&imgs[i]};
    const auto single = stack.forward(one);
    CHECK((batch.logits.row(static_cast<Eigen::Index>(i)) - single.logits.row(0)).norm() < 1e-12);
    CHECK((batch.m.row(static_cast<Eigen::Index>(i)) - single.m.row(0)).norm() < 1e-12);
  }
}

TEST_CASE("forward with equal classifier rows gives a uniform distribution") {
  ModelStack stack(Architecture{}, 1);
  auto& dir = stack.parameters().at("classifier.direction").value;
  for (Eigen::Index r = 1; r < dir.rows(); ++r) dir.row(r) = dir.row(0);
  Rng rng(1);
  const auto img = testing::random_image(3, 32, 32, rng);
  for (double tau : {0.04, 0.1, 1.0}) {
    const auto out = forward(stack, img, tau);
    CHECK((out.p.array() - 1.0 / out.p.size()).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("forward with logits (ln 2, 0) at tau 1 gives (2/3, 1/3)") {
  Architecture a = testing::tiny_architecture();
  a.num_classes = 2;
  ModelStack stack(a, 4);
  Rng rng(2);
  const auto img = testing::random_image(3, 4, 4, rng);
  const Vector q = forward(stack, img, 1.0).q;
  // Row 0 along q with magnitude ln 2, row 1 orthogonal to q.
  Vector ortho = Vector::Zero(q.size());
  ortho[0] = q[1];
  ortho[1] = -q[0];
  auto& dir = stack.parameters().at("classifier.direction").value;
  auto& mag = stack.parameters().at("classifier.magnitude").value;
  dir.row(0) = q.transpose();
  dir.row(1) = ortho.transpose();
  mag(0, 0) = std::log(2.0);
  mag(0, 1) = 1.0;
  const auto out = forward(stack, img, 1.0);
  CHECK(out.p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(out.p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("forward rejects images outside the input contract") {
  ModelStack stack(Architecture{}, 1);
  Rng rng(1);
  CHECK_THROWS_AS(forward(stack, testing::random_image(1, 32, 32, rng), 0.1), ConfigError);
  CHECK_THROWS_AS(forward(stack, testing::random_image(3, 30, 30, rng), 0.1), ConfigError);
  CHECK_THROWS_AS(forward(stack, testing::random_image(3, 32, 32, rng), 0.0), DomainError);
}

TEST_CASE("ema update examples") {
  Architecture a = testing::tiny_architecture();
  auto pair = TeacherStudentPair::from_student(ModelStack(a, 1), 0.9);
  for (auto& p : pair.teacher.parameters().items()) p.value.setConstant(2.0);
  for (auto& p : pair.student.parameters().items()) p.value.setConstant(1.0);
  ema_update(pair, 0.9);
  for (const auto& p : pair.teacher.parameters().items())
    CHECK((p.value.array() - (p.buffer ? 2.0 : 1.9)).abs().maxCoeff() < 1e-15);
  for (const auto& p : pair.student.parameters().items()) CHECK((p.value.array() == 1.0).all());

  const auto before = pair.teacher.parameters();
  ema_update(pair, 1.0);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(pair.teacher.parameters().items()[i].value == before.items()[i].value);
  ema_update(pair, 0.0);
  for (std::size_t i = 0; i < before.size(); ++i)
    if (!before.items()[i].buffer)
      CHECK(pair.teacher.parameters().items()[i].value == pair.student.parameters().items()[i].value);

  CHECK_THROWS_AS(ema_update(pair, 1.5), DomainError);
  CHECK_THROWS_AS(ema_update(pair, -0.1), DomainError);
  auto mismatched = pair;
  mismatched.teacher = ModelStack(Architecture{}, 2);
  CHECK_THROWS_AS(ema_update(mismatched, 0.5), ContractError);
}

TEST_CASE("ema closed form with a constant student") {
  auto pair = TeacherStudentPair::from_student(ModelStack(testing::tiny_architecture(), 3), 0.0);
  pair.teacher = ModelStack(testing::tiny_architecture(), 4);
  const auto t0 = pair.teacher.parameters();
  const double gamma = 0.95;
  for (int n = 1; n <= 50; ++n) {
    ema_update(pair, gamma);
    for (std::size_t i = 0; i < t0.size(); ++i) {
      const Matrix& s = pair.student.parameters().items()[i].value;
      const Matrix expect = s + std::pow(gamma, n) * (t0.items()[i].value - s);
      CHECK((pair.teacher.parameters().items()[i].value - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("schedule values") {
  const auto cos_spec = ScheduleSpec::cosine(0.99, 1.0, 100);
  CHECK(schedule_value(cos_spec, 0) == doctest::Approx(0.99).epsilon(1e-15));
  CHECK(schedule_value(cos_spec, 100) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(schedule_value(cos_spec, 50) == doctest::Approx(0.995).epsilon(1e-14));
  double prev = schedule_value(cos_spec, 0);
  for (int s = 1; s <= 100; ++s) {
    const double v = schedule_value(cos_spec, s);
    CHECK(v >= prev);
    prev = v;
  }
  CHECK_THROWS_AS(schedule_value(cos_spec, -1), DomainError);
  CHECK_THROWS_AS(schedule_value(cos_spec, 101), DomainError);

  CHECK(schedule_value(ScheduleSpec::constant(0.4, 10), 7) == 0.4);

  const auto warm = ScheduleSpec::warmup_cosine(0.04, 0.07, 0.07, 100, 30);
  CHECK(schedule_value(warm, 0) == doctest::Approx(0.04));
  CHECK(schedule_value(warm, 15) == doctest::Approx(0.055));
  CHECK(schedule_value(warm, 30) == doctest::Approx(0.07));
  CHECK(schedule_value(warm, 100) == doctest::Approx(0.07));

  const auto lr = ScheduleSpec::warmup_cosine(0.0, 5e-4, 1e-6, 100, 10);
  CHECK(schedule_value(lr, 0) == 0.0);
  CHECK(schedule_value(lr, 10) == doctest::Approx(5e-4));
  CHECK(schedule_value(lr, 100) == doctest::Approx(1e-6));
}

TEST_CASE("center update") {
  auto pair = TeacherStudentPair::from_student(ModelStack(testing::tiny_architecture(), 1), 0.9);
  const int c = pair.student.architecture().ssl_dim;
  Matrix batch(2, c);
  batch.row(0).setConstant(1.0);
  batch.row(1).setConstant(3.0);
  update_center(pair, batch, 0.0);
  CHECK((pair.center.array() - 2.0).abs().maxCoeff() < 1e-15);

  pair.center.setOnes();
  update_center(pair, Matrix::Ones(4, c), 0.9);
  CHECK((pair.center.array() - 1.0).abs().maxCoeff() < 1e-15);

  // Scalar-loop running mean oracle.
  Rng rng(12);
  pair.center.setZero();
  std::vector<double> oracle(static_cast<std::size_t>(c), 0.0);
  for (int step = 0; step < 20; ++step) {
    Matrix b(3, c);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.normal();
    update_center(pair, b, 0.9);
    for (int k = 0; k < c; ++k) {
      double mean = 0.0;
      for (int r = 0; r < 3; ++r) mean += b(r, k);
      mean /= 3.0;
      oracle[static_cast<std::size_t>(k)] = 0.9 * oracle[static_cast<std::size_t>(k)] + 0.1 * mean;
    }
  }
  for (int k = 0; k < c; ++k) CHECK(pair.center[k] == doctest::Approx(oracle[static_cast<std::size_t>(k)]).epsilon(1e-12));

  CHECK_THROWS_AS(update_center(pair, Matrix(0, c), 0.9), DomainError);
  CHECK_THROWS_AS(update_center(pair, batch, 1.0), DomainError);
}

TEST_CASE("checkpoint container round trip") {
  Rng rng(5);
  auto pair = TeacherStudentPair::from_student(ModelStack(testing::tiny_architecture(), 8), 0.99);
  pair.teacher = ModelStack(testing::tiny_architecture(), 9);
  pair.center = Vector::Random(pair.student.architecture().ssl_dim);
  pair.step = 42;
  Checkpoint ckpt;
  pack_pair(ckpt, pair);
  ckpt.put_ints("meta/misc", {1, -2, 3});
  TensorEntry f32{"meta/f32", DType::F32, {2}, {}, {1.5f, -2.25f}, {}};
  ckpt.put(f32);

  const std::string bytes = serialize_checkpoint(ckpt);
  CHECK(bytes.substr(0, 8) == "LAVACKPT");
  CHECK(static_cast<unsigned char>(bytes[8]) == kCheckpointVersion);
  const Checkpoint back = parse_checkpoint(bytes);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(back.ints("meta/misc") == std::vector<std::int64_t>{1, -2, 3});
  CHECK(back.find("meta/f32")->f32 == std::vector<float>{1.5f, -2.25f});

  const auto un = unpack_pair(back);
  CHECK(un.missing.empty());
  CHECK(un.pair.step == 42);
  CHECK(un.pair.center == pair.center);
  for (std::size_t i = 0; i < pair.student.parameters().size(); ++i) {
    CHECK(un.pair.student.parameters().items()[i].value == pair.student.parameters().items()[i].value);
    CHECK(un.pair.teacher.parameters().items()[i].value == pair.teacher.parameters().items()[i].value);
  }

  const auto path = std::filesystem::temp_directory_path() / "lava_ckpt_test.bin";
  write_checkpoint(ckpt, path);
  CHECK(serialize_checkpoint(read_checkpoint(path)) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint parse errors") {
  CHECK_THROWS_AS(parse_checkpoint("NOTACKPT\x01\0\0\0"), FormatError);
  CHECK_THROWS_AS(parse_checkpoint("LAVACK"), FormatError);
  Checkpoint ckpt;
  ckpt.put_scalar("x", 1.0);
  std::string bytes = serialize_checkpoint(ckpt);
  CHECK_THROWS_AS(parse_checkpoint(std::string_view(bytes).substr(0, bytes.size() - 3)), FormatError);
  bytes[8] = 9;
  CHECK_THROWS_AS(parse_checkpoint(bytes), FormatError);
}

TEST_CASE("unpack reports missing parameters") {
  auto pair = TeacherStudentPair::from_student(ModelStack(testing::tiny_architecture(), 8), 0.99);
  Checkpoint ckpt;
  pack_pair(ckpt, pair);
  ckpt.erase_prefix("student/ssl.");
  const auto un = unpack_pair(ckpt);
  CHECK(un.missing.size() == 1);
  CHECK(un.missing.front().starts_with("student/ssl."));
}

TEST_CASE("reset classifier keeps every other parameter") {
  ModelStack stack(Architecture{}, 3);
  const auto before = stack.parameters();
  stack.reset_classifier(7, 99);
  CHECK(stack.architecture().num_classes == 7);
  CHECK(stack.parameters().at("classifier.direction").value.rows() == 7);
  CHECK(stack.parameters().at("backbone.conv.weight").value == before.at("backbone.conv.weight").value);
  CHECK(stack.parameters().at("semantic.1.direction").value == before.at("semantic.1.direction").value);
}
