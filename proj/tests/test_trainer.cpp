#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "support.hpp"
#include "vstudent/errors.hpp"
#include "vstudent/optim.hpp"
#include "vstudent/trainer.hpp"

using namespace vstudent;

namespace {

StudentConfig small_config() {
  StudentConfig c;
  c.architecture = {40, 12, 10};
  c.epochs = 4;
  c.batch_size = 50;
  c.seed = 3;
  c.loss.lambda_v_max = 1e-3;
  c.loss.warmup_epochs = 2;
  return c;
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("adam step basics") {
  Matrix w(1, 1, 1.0);
  Matrix g(1, 1, 0.0);
  AdamState state;
  std::vector<ParamSlot> slots{{"w", &w, &g}};
  adam_step(state, slots);
  CHECK(w(0, 0) == 1.0);
  CHECK(state.t == 1);
  CHECK(state.m.size() == 1);
  CHECK(state.m[0].same_shape(w));

  g(0, 0) = 2.0;
  adam_step(state, slots);
  CHECK(w(0, 0) < 1.0);
  CHECK(state.t == 2);
}

TEST_CASE("adam converges on a quadratic") {
  Matrix w(1, 1, 1.0);
  Matrix g(1, 1, 0.0);
  AdamState state;
  state.options.learning_rate = 0.05;
  std::vector<ParamSlot> slots{{"w", &w, &g}};
  for (int i = 0; i < 200; ++i) {
    g(0, 0) = 2.0 * w(0, 0);
    adam_step(state, slots);
  }
  CHECK(std::abs(w(0, 0)) < 1e-2);
}

TEST_CASE("adam rejects non-finite gradients without touching parameters") {
  Matrix a(1, 2, 1.0), b(1, 1, 1.0);
  Matrix ga(1, 2, 0.5), gb(1, 1, std::nan(""));
  AdamState state;
  std::vector<ParamSlot> slots{{"layer0.theta", &a, &ga}, {"layer0.bias", &b, &gb}};
  try {
    adam_step(state, slots);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("layer0.bias") != std::string::npos);
  }
  CHECK(a == Matrix(1, 2, 1.0));
  CHECK(state.t == 0);
}

TEST_CASE("gradient clipping") {
  std::vector<Matrix> g{Matrix(1, 1, 3.0), Matrix(1, 1, 4.0)};
  CHECK(clip_gradients(g, 1.0) == 5.0);
  CHECK(std::abs(g[0](0, 0) - 0.6) < 1e-15);
  CHECK(std::abs(g[1](0, 0) - 0.8) < 1e-15);
  CHECK(clip_gradients(g, 10.0) == doctest::Approx(1.0));
  CHECK(std::abs(g[0](0, 0) - 0.6) < 1e-15);
}

TEST_CASE("evaluate") {
  SUBCASE("memoriser") {
    Dataset ds;
    ds.images = Matrix::identity(3);
    ds.labels = {4, 0, 9};
    VariationalDenseLayer layer{Matrix(3, 10, 0.0), Matrix(3, 10, kPointMassLogSigma2), Matrix(1, 10, 0.0)};
    for (std::size_t i = 0; i < 3; ++i) layer.theta(i, ds.labels[i]) = 10.0;
    const Evaluation e = evaluate(std::span(&layer, 1), ds, 3.0);
    CHECK(e.top1_error == 0.0);
  }
  SUBCASE("constant logits predict class 0") {
    const Dataset ds = test::synthetic_dataset(100, 5, 2);
    VariationalDenseLayer layer{Matrix(5, 10, 0.0), Matrix(5, 10, 0.0), Matrix(1, 10, 0.0)};
    const Evaluation e = evaluate(std::span(&layer, 1), ds, 3.0);
    CHECK(std::abs(e.top1_error - 0.9) < 1e-15);
    CHECK(e.r_s == std::numeric_limits<double>::infinity());
    CHECK(e.kept_weights == 0);
  }
  SUBCASE("repeatable") {
    const Dataset ds = test::synthetic_dataset(300, 12, 2);
    const auto layers = init_student({12, 8, 10}, 4);
    const Evaluation a = evaluate(layers, ds, 3.0);
    const Evaluation b = evaluate(layers, ds, 3.0);
    CHECK(a.top1_error == b.top1_error);
    CHECK(a.per_layer_sparsity == b.per_layer_sparsity);
    CHECK(a.r_s == 1.0);
  }
}

TEST_CASE("degenerate student training equals plain MLP training") {
  const Dataset ds = test::separable_dataset(300, 40, 5);
  StudentConfig c;
  c.architecture = {40, 12, 10};
  c.epochs = 3;
  c.batch_size = 32;
  c.seed = 8;
  c.loss.lambda_t = 0.0;
  c.loss.lambda_g = 0.0;
  c.loss.lambda_v_max = 0.0;
  const StudentRun run = train_student(StudentData{&ds, nullptr, nullptr, nullptr}, c);

  TeacherConfig t;
  t.architecture = c.architecture;
  t.epochs = c.epochs;
  t.batch_size = c.batch_size;
  t.seed = c.seed;
  std::vector<double> losses;
  const DenseMLP plain = train_teacher(ds, t, [&](const TeacherEpoch& e, const DenseMLP&) { losses.push_back(e.mean_loss); });

  REQUIRE(run.session.records.size() == losses.size());
  for (std::size_t e = 0; e < losses.size(); ++e) CHECK(std::abs(run.session.records[e].terms.cross_entropy - losses[e]) < 1e-10);
  for (std::size_t l = 0; l < plain.layers.size(); ++l) {
    for (std::size_t i = 0; i < plain.layers[l].weight.size(); ++i)
      CHECK(std::abs(plain.layers[l].weight.data()[i] - run.layers[l].theta.data()[i]) < 1e-10);
  }
}

TEST_CASE("student sessions replay exactly") {
  const Dataset ds = test::separable_dataset(200, 40, 6);
  const Dataset test_ds = test::separable_dataset(60, 40, 7);
  const DenseMLP teacher = init_dense_mlp({40, 20, 10}, 2);
  const LogitCache cache = precompute_logits(teacher, ds);
  const std::string digest = checkpoint_digest(teacher);
  StudentConfig c = small_config();
  c.loss.bsr = BsrVariant::l1_linf;
  const StudentData data{&ds, &cache, &teacher, &test_ds};
  const StudentRun a = train_student(data, c);
  const StudentRun b = train_student(data, c);
  CHECK(a.session.to_jsonl() == b.session.to_jsonl());
  CHECK(flatten_student(a.layers) == flatten_student(b.layers));
  CHECK(count_lines(a.session.to_jsonl()) == c.epochs + 1);
  CHECK(count_lines(a.session.timing_jsonl()) == c.epochs);
  CHECK(checkpoint_digest(teacher) == digest);

  c.seed = 4;
  CHECK(train_student(data, c).session.to_jsonl() != a.session.to_jsonl());
}

TEST_CASE("warm-up scales the KL weight per epoch") {
  const Dataset ds = test::separable_dataset(100, 40, 6);
  StudentConfig c = small_config();
  c.loss.lambda_t = 0.0;
  c.loss.warmup_epochs = 2;
  const StudentRun warm = train_student(StudentData{&ds}, c);
  CHECK(warm.session.records[0].terms.lambda_v == 0.0);
  CHECK(warm.session.records[1].terms.lambda_v < 1e-3);
  CHECK(warm.session.records[1].terms.lambda_v > 0.0);
  CHECK(warm.session.records[2].terms.lambda_v == 1e-3);

  c.loss.warmup_epochs = 0;
  const StudentRun cold = train_student(StudentData{&ds}, c);
  CHECK(cold.session.records[0].terms.lambda_v == 1e-3);

  c.loss.lambda_v_max.reset();
  CHECK(c.resolved_lambda_v(ds.size()) == 1.0 / 100.0);
}

TEST_CASE("kept weights grow with the threshold on a trained snapshot") {
  const Dataset ds = test::separable_dataset(200, 40, 9);
  StudentConfig c = small_config();
  c.loss.lambda_t = 0.0;
  c.loss.lambda_v_max = 0.05;
  c.epochs = 6;
  const StudentRun run = train_student(StudentData{&ds}, c);
  std::size_t previous = 0;
  for (double tau : {0.0, 1.0, 3.0, 5.0, 10.0}) {
    const Evaluation e = evaluate(run.layers, ds, tau);
    CHECK(e.kept_weights >= previous);
    previous = e.kept_weights;
  }
}

TEST_CASE("training errors") {
  const Dataset ds = test::separable_dataset(100, 40, 6);
  StudentConfig c = small_config();
  c.loss.lambda_t = 2.0;
  CHECK_THROWS_AS(train_student(StudentData{&ds}, c), UsageError);
  c.loss.lambda_t = 0.0;
  c.loss.bsr = BsrVariant::l1_l2;
  CHECK_THROWS_AS(train_student(StudentData{&ds}, c), UsageError);
  c.loss.bsr = BsrVariant::none;
  c.architecture = {41, 10};
  CHECK_THROWS_AS(train_student(StudentData{&ds}, c), ShapeError);

  c = small_config();
  c.loss.lambda_t = 0.0;
  c.learning_rate = 1e200;
  try {
    train_student(StudentData{&ds}, c);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch") != std::string::npos);
    CHECK(msg.find("batch") != std::string::npos);
  }
}

TEST_CASE("low-data sweep") {
  const Dataset ds = test::separable_dataset(200, 40, 10);
  const Dataset test_ds = test::separable_dataset(50, 40, 11);
  const DenseMLP teacher = init_dense_mlp({40, 20, 10}, 2);
  const LogitCache cache = precompute_logits(teacher, ds);
  StudentConfig c = small_config();
  c.epochs = 2;

  const std::vector<std::size_t> sizes{20, 60};
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const auto rows = lowdata_sweep(ds, cache, &teacher, test_ds, c, sizes, seeds);
  CHECK(rows.size() == sizes.size() * seeds.size() * 2);
  CHECK(rows[0].hint);
  CHECK_FALSE(rows[1].hint);
  CHECK(rows[0].size == 20);
  CHECK(rows.back().size == 60);

  const auto summary = summarize(rows);
  CHECK(summary.size() == 4);
  double mean = 0.0;
  for (const auto& r : rows)
    if (r.size == 20 && r.hint) mean += r.test_error / 3.0;
  CHECK(std::abs(summary[0].mean_error - mean) < 1e-15);
  CHECK(summary[0].runs == 3);

  const std::vector<std::size_t> full{ds.size()};
  const std::vector<std::uint64_t> one{5};
  const auto whole = lowdata_sweep(ds, cache, &teacher, test_ds, c, full, one);
  StudentConfig direct = c;
  direct.seed = 5;
  const StudentRun run = train_student(StudentData{&ds, &cache, &teacher, &test_ds}, direct);
  CHECK(whole[0].test_error == run.session.records.back().test_error);

  const std::vector<std::size_t> too_big{201};
  CHECK_THROWS_AS(lowdata_sweep(ds, cache, &teacher, test_ds, c, too_big, one), DomainError);
}
