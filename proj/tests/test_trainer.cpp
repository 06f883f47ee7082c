// Training loops: schedule and batching mechanics, determinism, the composite
// student objective (gradient-checked end to end), teacher distillation, and
// the sweep/fine-tune contracts.
#include "doctest.h"

#include "nettrim/checkpoint.hpp"
#include "nettrim/complexity.hpp"
#include "nettrim/datagen.hpp"
#include "nettrim/gradcheck.hpp"
#include "nettrim/student.hpp"
#include "nettrim/trainer.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <vector>

using namespace nettrim;

namespace {

// Smallest legal plan that still eats 28x28 task images: four thin blocks,
// one downsampling step where the width doubles.
BackbonePlan tiny28_plan(std::int64_t num_classes) {
  BackbonePlan plan;
  plan.input_channels = 1;
  plan.input_size = 28;
  plan.channels = {2, 2, 4, 4};
  plan.num_classes = num_classes;
  return plan;
}

// Self-contained plan for gradient checks: no dataset, 8x8 inputs.
BackbonePlan tiny8_plan() {
  BackbonePlan plan;
  plan.input_channels = 1;
  plan.input_size = 8;
  plan.channels = {2, 2, 4, 4};
  plan.num_classes = 2;
  return plan;
}

TensorD random_images(std::int64_t n, std::int64_t side, Rng rng) {
  TensorD x(Shape{n, 1, side, side});
  for (std::int64_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("learning-rate schedule steps at 60% and 80% of the epochs") {
  for (int e = 0; e < 6; ++e) CHECK(lr_at_epoch(1.0, e, 10) == 1.0);
  CHECK(lr_at_epoch(1.0, 6, 10) == doctest::Approx(0.1));
  CHECK(lr_at_epoch(1.0, 7, 10) == doctest::Approx(0.1));
  CHECK(lr_at_epoch(1.0, 8, 10) == doctest::Approx(0.01));
  CHECK(lr_at_epoch(1.0, 9, 10) == doctest::Approx(0.01));
  // Integer boundaries for a length that does not divide evenly.
  CHECK(lr_at_epoch(1.0, 3, 7) == 1.0);
  CHECK(lr_at_epoch(1.0, 4, 7) == doctest::Approx(0.1));
  CHECK(lr_at_epoch(1.0, 5, 7) == doctest::Approx(0.01));
  CHECK(lr_at_epoch(0.5, 3, 0) == 0.5);  // degenerate total: no decay
}

TEST_CASE("train config validation and echo") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.echo().find("lr=") != std::string::npos);
  CHECK(cfg.echo().find("seed=") != std::string::npos);

  auto reject = [](auto&& mutate) {
    TrainConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  };
  reject([](TrainConfig& c) { c.lr = -0.1; });
  reject([](TrainConfig& c) { c.momentum = 1.0; });
  reject([](TrainConfig& c) { c.epochs = -1; });
  reject([](TrainConfig& c) { c.batch_size = 1; });
  reject([](TrainConfig& c) { c.gamma1 = -1; });
  reject([](TrainConfig& c) { c.gamma2 = -1; });
  reject([](TrainConfig& c) { c.theta = 1.0; });
  reject([](TrainConfig& c) { c.accuracy_slack = -0.001; });
}

TEST_CASE("shuffled indices form a deterministic permutation") {
  Rng a = Rng(3).split("shuffle");
  Rng b = Rng(3).split("shuffle");
  const auto pa = shuffled_indices(100, a);
  const auto pb = shuffled_indices(100, b);
  CHECK(pa == pb);

  auto sorted = pa;
  std::sort(sorted.begin(), sorted.end());
  for (std::int64_t i = 0; i < 100; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);

  Rng c = Rng(4).split("shuffle");
  CHECK(shuffled_indices(100, c) != pa);
}

TEST_CASE("make_batch gathers the requested rows and casts the scalar type") {
  const TaskData task = gen_task("easy", 24, 24, 2);
  const std::vector<std::int64_t> order = {5, 0, 7, 3};
  auto [x, labels] = make_batch<double>(task.train, order, 1, 2);  // rows 0 and 7
  CHECK(x.shape() == Shape{2, 1, 28, 28});
  REQUIRE(labels.size() == 2);
  CHECK(labels[0] == task.train.labels[0]);
  CHECK(labels[1] == task.train.labels[7]);
  const std::int64_t sample = 28 * 28;
  for (std::int64_t j = 0; j < sample; ++j) {
    CHECK(x.at(j) == static_cast<double>(task.train.images.at(0 * sample + j)));
    CHECK(x.at(sample + j) == static_cast<double>(task.train.images.at(7 * sample + j)));
  }
}

TEST_CASE("zero epochs return an untouched network and empty history") {
  auto net = build_backbone<double>(tiny28_plan(2), 11);
  const auto before = net.digest();
  TrainConfig cfg;
  cfg.epochs = 0;
  const TaskData task = gen_task("easy", 32, 20, 4);
  const auto history = train_backbone(net, task, cfg);
  CHECK(history.empty());
  CHECK(net.digest() == before);
}

TEST_CASE("backbone training is bit-deterministic in the seed") {
  const TaskData task = gen_task("easy", 32, 20, 9);
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 5;

  auto n1 = build_backbone<double>(tiny28_plan(2), 7);
  auto n2 = build_backbone<double>(tiny28_plan(2), 7);
  const auto h1 = train_backbone(n1, task, cfg);
  const auto h2 = train_backbone(n2, task, cfg);
  CHECK(n1.digest() == n2.digest());
  REQUIRE(h1.size() == 2);
  CHECK(h1[1].loss == h2[1].loss);

  auto n3 = build_backbone<double>(tiny28_plan(2), 7);
  TrainConfig other = cfg;
  other.seed = 6;
  train_backbone(n3, task, other);
  CHECK(n3.digest() != n1.digest());
}

TEST_CASE("documented source run: lr 0.05, 10 epochs clears 90% train accuracy") {
  // The canonical pretraining recipe must actually fit its own training split;
  // the backbone is the full default plan and the data the ten-class source.
  const TaskData task = gen_task("source", 1024, 512, 1);
  auto net = build_backbone<float>(default_plan(), 1);
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.epochs = 10;
  cfg.batch_size = 64;
  cfg.seed = 1;
  const auto history = train_backbone(net, task, cfg, /*eval_limit=*/256);
  REQUIRE(history.size() == 10);
  const double train_acc = evaluate_backbone(net, task.train, 64);
  CHECK(train_acc > 0.90);
}

TEST_CASE("teacher gets a task-sized head and leaves the source network alone") {
  auto base = build_backbone<double>(tiny28_plan(10), 21);
  const auto base_digest = base.digest();
  const TaskData task = gen_task("easy", 32, 20, 6);
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.epochs = 2;
  cfg.batch_size = 16;

  const auto teacher = train_teacher(base, task, cfg);
  CHECK(base.digest() == base_digest);  // trained a clone, not the original
  CHECK(teacher.history.size() == 2);
  CHECK(teacher.accuracy == evaluate_backbone(*teacher.net, task.test, 16));

  auto [x, labels] = make_batch<double>(task.test, {0, 1}, 0, 2);
  CHECK(teacher.net->forward(x, false).shape() == Shape{2, 2});
}

TEST_CASE("distillation penalty: hand-worked value, exact gradient, missing node") {
  // Student node x_1 = [1, 2] vs teacher zeros contributes 5; logits [1, -1]
  // vs zeros contribute 2; total 7.
  StudentOutput<double> out;
  out.nodes[1] = TensorD(Shape{1, 2});
  out.nodes[1].data()[0] = 1;
  out.nodes[1].data()[1] = 2;
  out.logits = TensorD(Shape{1, 2});
  out.logits.data()[0] = 1;
  out.logits.data()[1] = -1;
  std::vector<TensorD> teacher_nodes(2);
  teacher_nodes[1] = TensorD(Shape{1, 2});
  TensorD teacher_logits(Shape{1, 2});

  CHECK(omega_penalty(out, teacher_nodes, teacher_logits).item() == 7.0);

  // d/dx sum((x - t)^2) = 2(x - t), exactly representable here.
  out.nodes[1].set_requires_grad(true);
  out.logits.set_requires_grad(true);
  {
    ComputeGraph<double> tape;
    auto om = omega_penalty(out, teacher_nodes, teacher_logits);
    tape.backward(om);
  }
  CHECK(out.nodes[1].grad_data()[0] == 2.0);
  CHECK(out.nodes[1].grad_data()[1] == 4.0);
  CHECK(out.logits.grad_data()[0] == 2.0);
  CHECK(out.logits.grad_data()[1] == -2.0);

  StudentOutput<double> deep;
  deep.nodes[4] = TensorD(Shape{1, 2});
  deep.logits = TensorD(Shape{1, 2});
  CHECK_THROWS_AS(omega_penalty(deep, teacher_nodes, teacher_logits),
                  std::runtime_error);
}

TEST_CASE("student loss decomposes into its three documented terms") {
  auto backbone = std::make_shared<Backbone<double>>(build_backbone<double>(tiny8_plan(), 3));
  auto g = attach_proxies(backbone, 2, 2, 17);
  auto teacher = std::make_shared<Backbone<double>>(backbone->clone());
  rehead(*teacher, 2, Rng(9));
  const auto table = make_complexity_table(backbone->plan, 2);

  const TensorD x = random_images(4, 8, Rng(5));
  const std::vector<std::int64_t> labels = {0, 1, 1, 0};

  TrainConfig cfg;
  cfg.gamma1 = 0;
  cfg.gamma2 = 0;
  auto plain = student_loss(g, *teacher, x, labels, table, cfg);
  CHECK(plain.total.item() == plain.ce);
  CHECK(plain.omega == 0.0);

  cfg.gamma1 = 0.3;
  auto with_c = student_loss(g, *teacher, x, labels, table, cfg);
  CHECK(with_c.total.item() ==
        doctest::Approx(with_c.ce + 0.3 * with_c.expected_c).epsilon(1e-12));

  cfg.gamma2 = 5.0;
  auto full = student_loss(g, *teacher, x, labels, table, cfg);
  CHECK(full.omega > 0.0);
  CHECK(full.total.item() ==
        doctest::Approx(full.ce + 0.3 * full.expected_c + 5.0 / 4.0 * full.omega)
            .epsilon(1e-12));
}

TEST_CASE("full objective gradient-checks over every task parameter") {
  // End-to-end: conv/batchnorm/pool proxies, gate softmaxes through the
  // expected-complexity term, and the distillation penalty, differentiated
  // with one tape over the whole composite loss.
  auto backbone = std::make_shared<Backbone<double>>(build_backbone<double>(tiny8_plan(), 13));
  auto g = attach_proxies(backbone, 2, 2, 29);
  auto teacher = std::make_shared<Backbone<double>>(backbone->clone());
  rehead(*teacher, 2, Rng(31));
  const auto table = make_complexity_table(backbone->plan, 2);

  const TensorD x = random_images(2, 8, Rng(41));
  const std::vector<std::int64_t> labels = {0, 1};
  TrainConfig cfg;
  cfg.gamma1 = 0.3;
  cfg.gamma2 = 10.0;

  auto params = g.task_params(/*alive_only=*/true);
  auto rep = grad_check<double>(
      [&] { return student_loss(g, *teacher, x, labels, table, cfg).total; }, params,
      1e-5, /*max_entries_per_param=*/8);
  CHECK(rep.deterministic);
  CHECK(rep.entries_checked > 50);
  CHECK_MESSAGE(rep.max_rel_err < 1e-4, rep.worst);
}

TEST_CASE("student training logs gates, guards the backbone, and reduces the loss") {
  auto backbone = std::make_shared<Backbone<double>>(build_backbone<double>(tiny28_plan(10), 23));
  const TaskData task = gen_task("easy", 32, 20, 8);
  auto g = attach_proxies(backbone, 2, 2, 37);
  auto teacher = std::make_shared<Backbone<double>>(backbone->clone());
  rehead(*teacher, 2, Rng(43));
  const auto table = make_complexity_table(backbone->plan, 2);

  TrainConfig cfg;
  cfg.lr = 3e-4;
  cfg.epochs = 4;
  cfg.batch_size = 16;
  cfg.gamma1 = 0.3;
  cfg.gamma2 = 10.0;

  const auto digest_before = backbone->digest();
  const auto history = train_student(g, *teacher, task, table, cfg);
  CHECK(backbone->digest() == digest_before);
  REQUIRE(history.size() == 4);
  for (const auto& rec : history) {
    CHECK(std::isfinite(rec.loss));
    CHECK(rec.expected_c > 0.0);
    CHECK(rec.omega > 0.0);
    REQUIRE_FALSE(rec.alphas.empty());
    for (const auto& [name, alpha] : rec.alphas) {
      CHECK(alpha >= 0.0);
      CHECK(alpha <= 1.0);
    }
  }
  CHECK(history.back().loss < history.front().loss);
}

TEST_CASE("fine-tuning insists the architecture penalty is off") {
  auto backbone = std::make_shared<Backbone<double>>(build_backbone<double>(tiny28_plan(10), 3));
  const TaskData task = gen_task("easy", 32, 20, 5);
  auto g = attach_proxies(backbone, 2, 2, 7);
  auto teacher = std::make_shared<Backbone<double>>(backbone->clone());
  rehead(*teacher, 2, Rng(11));
  const auto table = make_complexity_table(backbone->plan, 2);

  TrainConfig bad;
  bad.gamma1 = 0.3;
  bad.epochs = 1;
  CHECK_THROWS_AS(finetune_pruned(g, *teacher, task, table, bad), std::invalid_argument);
  CHECK_THROWS_AS(
      sweep_and_select(g, *teacher, 0.9, task, table, {0}, bad), std::invalid_argument);

  TrainConfig ok;
  ok.gamma1 = 0;
  CHECK_THROWS_AS(sweep_and_select(g, *teacher, 0.9, task, table, {}, ok),
                  std::invalid_argument);
}

TEST_CASE("sweep reports every candidate and tolerates infeasible ones") {
  auto backbone = std::make_shared<Backbone<double>>(build_backbone<double>(tiny28_plan(10), 19));
  const TaskData task = gen_task("easy", 32, 20, 13);
  auto g = attach_proxies(backbone, 2, 2, 23);
  auto teacher = std::make_shared<Backbone<double>>(backbone->clone());
  rehead(*teacher, 2, Rng(29));
  const auto table = make_complexity_table(backbone->plan, 2);

  TrainConfig ft;
  ft.lr = 0.01;
  ft.epochs = 1;
  ft.batch_size = 16;
  ft.gamma1 = 0;
  ft.gamma2 = 0;

  // teacher_accuracy 0 makes every feasible candidate qualify, so the
  // selection logic itself is exercised without a training dependency.
  const auto result = sweep_and_select(g, *teacher, 0.0, task, table,
                                       {0, 99}, ft);
  REQUIRE(result.entries.size() == 2);
  const auto& ok = result.entries[0].report;
  CHECK(ok.feasible);
  CHECK(ok.n_requested == 0);
  CHECK(ok.n_removed_pretrained == 0);
  CHECK(ok.acc_teacher == 0.0);
  CHECK(ok.params_after < ok.params_before);  // freshly-initialized proxies fall to theta
  CHECK(result.entries[0].graph != nullptr);
  CHECK(result.entries[0].finetune_history.size() == 1);

  const auto& bad = result.entries[1].report;
  CHECK_FALSE(bad.feasible);  // cannot remove 99 pre-trained blocks
  CHECK(result.entries[1].graph == nullptr);

  CHECK(result.selection.index == 0);
  CHECK(result.selection.any_qualified);
  CHECK(result.teacher_accuracy == 0.0);
}

TEST_CASE("divergence is reported as an error carrying the config echo") {
  auto net = build_backbone<double>(tiny28_plan(2), 31);
  const TaskData task = gen_task("easy", 32, 20, 15);
  TrainConfig cfg;
  cfg.lr = 1e200;  // second batch sees non-finite batch statistics
  cfg.momentum = 0;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  try {
    train_backbone(net, task, cfg);
    FAIL("expected divergence");
  } catch (const std::runtime_error& e) {
    const std::string what = e.what();
    CHECK(what.find("diverged") != std::string::npos);
    CHECK(what.find("lr=") != std::string::npos);
  }
}
