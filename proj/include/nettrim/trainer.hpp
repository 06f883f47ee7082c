// SGD training loops: backbone pretraining, per-task teachers, gated student
// training under the expected-complexity + distillation objective, and the
// prune/fine-tune sweep that picks the leanest accurate candidate.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nettrim/autograd.hpp"
#include "nettrim/backbone.hpp"
#include "nettrim/complexity.hpp"
#include "nettrim/datagen.hpp"
#include "nettrim/ops.hpp"
#include "nettrim/pruner.hpp"
#include "nettrim/rng.hpp"
#include "nettrim/student.hpp"
#include "nettrim/tensor.hpp"

namespace nettrim {

// All knobs for one training phase. Values come from config files; the
// defaults here are the documented ones, not a substitute for configuration.
struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  int epochs = 10;
  std::int64_t batch_size = 64;
  double gamma1 = 0.3;             // weight on expected complexity
  double gamma2 = 10.0;            // weight on teacher distillation
  double theta = 0.05;             // proxy pruning threshold
  double accuracy_slack = 0.005;   // tolerated drop vs. the teacher
  std::uint64_t seed = 1;

  void validate() const {
    if (!(lr >= 0)) throw std::invalid_argument("TrainConfig: lr must be >= 0");
    if (!(momentum >= 0 && momentum < 1)) {
      throw std::invalid_argument("TrainConfig: momentum must be in [0,1)");
    }
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    if (batch_size < 2) throw std::invalid_argument("TrainConfig: batch_size must be >= 2");
    if (gamma1 < 0 || gamma2 < 0) {
      throw std::invalid_argument("TrainConfig: gamma1/gamma2 must be >= 0");
    }
    if (!(theta >= 0 && theta < 1)) {
      throw std::invalid_argument("TrainConfig: theta must be in [0,1)");
    }
    if (accuracy_slack < 0) {
      throw std::invalid_argument("TrainConfig: accuracy_slack must be >= 0");
    }
  }

  std::string echo() const {
    std::ostringstream os;
    os << "lr=" << lr << " momentum=" << momentum << " epochs=" << epochs
       << " batch_size=" << batch_size << " gamma1=" << gamma1 << " gamma2=" << gamma2
       << " theta=" << theta << " slack=" << accuracy_slack << " seed=" << seed;
    return os.str();
  }

  bool operator==(const TrainConfig&) const = default;
};

// Plain SGD with classical momentum: v = m*v + g; p -= lr*v.
template <typename S>
class SGD {
 public:
  SGD(std::vector<Tensor<S>> params, double lr, double momentum)
      : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    velocity_.reserve(params_.size());
    for (const auto& p : params_) velocity_.emplace_back(p.numel(), S(0));
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (p.storage()->grad.empty()) continue;
      S* pd = p.data();
      const S* g = p.grad_data();
      S* v = velocity_[i].data();
      const S m = static_cast<S>(momentum_), step = static_cast<S>(lr_);
      for (std::int64_t j = 0; j < p.numel(); ++j) {
        v[j] = m * v[j] + g[j];
        pd[j] -= step * v[j];
      }
    }
  }

 private:
  std::vector<Tensor<S>> params_;
  std::vector<std::vector<S>> velocity_;
  double lr_ = 0;
  double momentum_ = 0;
};

// Step decay: x0.1 once 60% of epochs are done, x0.01 once 80% are done.
inline double lr_at_epoch(double base_lr, int epoch, int total_epochs) {
  if (total_epochs <= 0) return base_lr;
  double lr = base_lr;
  if (epoch >= (total_epochs * 6) / 10) lr *= 0.1;
  if (epoch >= (total_epochs * 8) / 10) lr *= 0.1;
  return lr;
}

inline std::vector<std::int64_t> shuffled_indices(std::int64_t n, Rng& rng) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(rng.uniform_u64(static_cast<std::uint64_t>(i + 1)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  return order;
}

// Copies rows order[start .. start+count) of the dataset into a fresh batch.
template <typename S>
std::pair<Tensor<S>, std::vector<std::int64_t>> make_batch(
    const Dataset& data, const std::vector<std::int64_t>& order, std::int64_t start,
    std::int64_t count) {
  const auto c = data.images.dim(1), h = data.images.dim(2), w = data.images.dim(3);
  const std::int64_t sample = c * h * w;
  Tensor<S> x(Shape{count, c, h, w});
  std::vector<std::int64_t> labels(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    const auto src = order[static_cast<std::size_t>(start + i)];
    const float* from = data.images.data() + src * sample;
    S* to = x.data() + i * sample;
    for (std::int64_t j = 0; j < sample; ++j) to[j] = static_cast<S>(from[j]);
    labels[static_cast<std::size_t>(i)] = data.labels[static_cast<std::size_t>(src)];
  }
  return {std::move(x), std::move(labels)};
}

namespace detail {

inline std::vector<std::int64_t> identity_order(std::int64_t n) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  return order;
}

inline void check_finite(double v, const char* what, int epoch, const TrainConfig& cfg) {
  if (std::isfinite(v)) return;
  std::ostringstream os;
  os << "training diverged: " << what << " is not finite at epoch " << epoch << " ("
     << cfg.echo() << ")";
  throw std::runtime_error(os.str());
}

}  // namespace detail

// Accuracy of the backbone head over a dataset (eval mode, no tracing).
template <typename S>
double evaluate_backbone(Backbone<S>& net, const Dataset& data, std::int64_t batch_size,
                         std::int64_t limit = 0) {
  const std::int64_t n = limit > 0 ? std::min<std::int64_t>(limit, data.size()) : data.size();
  const auto order = detail::identity_order(n);
  std::int64_t hits = 0;
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const auto count = std::min<std::int64_t>(batch_size, n - start);
    auto [x, labels] = make_batch<S>(data, order, start, count);
    auto logits = net.forward(x, /*training=*/false);
    const auto pred = argmax_rows(logits);
    for (std::int64_t i = 0; i < count; ++i) {
      if (pred[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(i)]) ++hits;
    }
  }
  return n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
}

// Accuracy of a gated student over a dataset (eval mode, no tracing).
template <typename S>
double evaluate_student(StudentGraph<S>& g, const Dataset& data, std::int64_t batch_size,
                        std::int64_t limit = 0) {
  const std::int64_t n = limit > 0 ? std::min<std::int64_t>(limit, data.size()) : data.size();
  const auto order = detail::identity_order(n);
  std::int64_t hits = 0;
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const auto count = std::min<std::int64_t>(batch_size, n - start);
    auto [x, labels] = make_batch<S>(data, order, start, count);
    auto out = g.forward(x, /*training=*/false);
    const auto pred = argmax_rows(out.logits);
    for (std::int64_t i = 0; i < count; ++i) {
      if (pred[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(i)]) ++hits;
    }
  }
  return n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
}

// One epoch's worth of logged quantities.
struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  double loss = 0;          // mean total loss over batches
  double ce = 0;            // mean cross-entropy
  double expected_c = 0;    // mean E[C] (students only)
  double omega = 0;         // mean per-batch distillation penalty (students only)
  double train_acc = 0;
  double test_acc = 0;
  std::map<std::string, double> alphas;  // gate values after the epoch (students only)
};

using TrainHistory = std::vector<EpochRecord>;

// Cross-entropy training of a full backbone (used for source pretraining and
// for per-task teachers). Mutates `net` in place.
template <typename S>
TrainHistory train_backbone(Backbone<S>& net, const TaskData& task, const TrainConfig& cfg,
                            std::int64_t eval_limit = 0) {
  cfg.validate();
  net.set_trainable(true);
  SGD<S> opt(net.params(), cfg.lr, cfg.momentum);
  Rng rng = Rng(cfg.seed).split("train-backbone");
  TrainHistory history;
  const std::int64_t n = task.train.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng = rng.split(static_cast<std::uint64_t>(epoch));
    const auto order = shuffled_indices(n, erng);
    opt.set_lr(lr_at_epoch(cfg.lr, epoch, cfg.epochs));
    double loss_sum = 0;
    std::int64_t batches = 0, hits = 0, seen = 0;
    for (std::int64_t start = 0; start < n; start += cfg.batch_size) {
      const auto count = std::min<std::int64_t>(cfg.batch_size, n - start);
      if (count < 2) break;  // a size-1 batch has no batch statistics
      auto [x, labels] = make_batch<S>(task.train, order, start, count);
      ComputeGraph<S> tape;
      auto logits = net.forward(x, /*training=*/true);
      auto loss = cross_entropy(logits, labels);
      const double loss_v = static_cast<double>(loss.item());
      detail::check_finite(loss_v, "cross-entropy", epoch, cfg);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
      loss_sum += loss_v;
      ++batches;
      const auto pred = argmax_rows(logits);
      for (std::int64_t i = 0; i < count; ++i) {
        if (pred[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(i)]) ++hits;
      }
      seen += count;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = opt.lr();
    rec.loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    rec.ce = rec.loss;
    rec.train_acc = seen ? static_cast<double>(hits) / static_cast<double>(seen) : 0.0;
    rec.test_acc = evaluate_backbone(net, task.test, cfg.batch_size, eval_limit);
    history.push_back(std::move(rec));
  }
  return history;
}

// A trained task teacher: full backbone weights plus its test accuracy.
template <typename S>
struct Teacher {
  std::shared_ptr<Backbone<S>> net;
  double accuracy = 0;
  TrainHistory history;
};

// Fine-tunes a copy of the pretrained backbone on one task, behind a fresh
// task-sized classifier head.
template <typename S>
Teacher<S> train_teacher(const Backbone<S>& pretrained, const TaskData& task,
                         const TrainConfig& cfg) {
  Teacher<S> t;
  t.net = std::make_shared<Backbone<S>>(pretrained.clone());
  rehead(*t.net, task.train.num_classes, Rng(cfg.seed).split("head"));
  t.history = train_backbone(*t.net, task, cfg);
  t.accuracy = evaluate_backbone(*t.net, task.test, cfg.batch_size);
  return t;
}

// Distillation penalty: sum of squared differences between student and
// teacher activations at every live internal node, plus the logits pair.
// Teacher tensors are constants; gradients flow only into the student side.
template <typename S>
Tensor<S> omega_penalty(const StudentOutput<S>& student,
                        const std::vector<Tensor<S>>& teacher_nodes,
                        const Tensor<S>& teacher_logits) {
  Tensor<S> total = Tensor<S>::scalar(S(0));
  for (const auto& [node, act] : student.nodes) {
    if (node <= 0) continue;
    if (static_cast<std::size_t>(node) >= teacher_nodes.size()) {
      throw std::runtime_error("omega_penalty: teacher has no node " + std::to_string(node));
    }
    total = add(total, sum_of_squares(sub(act, teacher_nodes[static_cast<std::size_t>(node)])));
  }
  total = add(total, sum_of_squares(sub(student.logits, teacher_logits)));
  return total;
}

// Value bundle for one student batch.
template <typename S>
struct LossParts {
  Tensor<S> total;
  double ce = 0;
  double expected_c = 0;
  double omega = 0;
};

// L = CE + gamma1 * E[C] + gamma2 * Omega/batch. The teacher forward runs with
// tracing paused; E[C] is built from the gate parameters so d(loss)/d(a) sees
// both the task loss and the complexity pressure.
template <typename S>
LossParts<S> student_loss(StudentGraph<S>& g, Backbone<S>& teacher, const Tensor<S>& x,
                          const std::vector<std::int64_t>& labels,
                          const ComplexityTable& table, const TrainConfig& cfg,
                          StudentOutput<S>* out_fwd = nullptr) {
  auto out = g.forward(x, /*training=*/true);
  LossParts<S> parts;
  auto ce = cross_entropy(out.logits, labels);
  parts.ce = static_cast<double>(ce.item());
  Tensor<S> loss = ce;
  auto ec = expected_network_complexity_traced(g, table);
  parts.expected_c = static_cast<double>(ec.item());
  if (cfg.gamma1 != 0) loss = add(loss, scale_const(ec, cfg.gamma1));
  if (cfg.gamma2 != 0) {
    std::vector<Tensor<S>> teacher_nodes;
    Tensor<S> teacher_logits;
    {
      PauseGuard<S> pause;
      teacher_nodes = teacher.node_activations(x, /*training=*/false);
      teacher_logits = teacher.head_forward(teacher_nodes.back());
    }
    auto om = omega_penalty(out, teacher_nodes, teacher_logits);
    parts.omega = static_cast<double>(om.item());
    loss = add(loss, scale_const(om, cfg.gamma2 / static_cast<double>(x.dim(0))));
  }
  parts.total = loss;
  if (out_fwd) *out_fwd = std::move(out);
  return parts;
}

// Trains proxies, gates, and classifier of a gated student against a frozen
// backbone and a fixed teacher. The backbone digest is checked before and
// after: any drift in frozen weights is a hard error.
template <typename S>
TrainHistory train_student(StudentGraph<S>& g, Backbone<S>& teacher, const TaskData& task,
                           const ComplexityTable& table, const TrainConfig& cfg,
                           std::int64_t eval_limit = 0) {
  cfg.validate();
  const std::uint64_t digest_before = g.backbone->digest();
  SGD<S> opt(g.task_params(/*alive_only=*/true), cfg.lr, cfg.momentum);
  Rng rng = Rng(cfg.seed).split("train-student");
  TrainHistory history;
  const std::int64_t n = task.train.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng = rng.split(static_cast<std::uint64_t>(epoch));
    const auto order = shuffled_indices(n, erng);
    opt.set_lr(lr_at_epoch(cfg.lr, epoch, cfg.epochs));
    double loss_sum = 0, ce_sum = 0, ec_sum = 0, om_sum = 0;
    std::int64_t batches = 0, hits = 0, seen = 0;
    for (std::int64_t start = 0; start < n; start += cfg.batch_size) {
      const auto count = std::min<std::int64_t>(cfg.batch_size, n - start);
      if (count < 2) break;
      auto [x, labels] = make_batch<S>(task.train, order, start, count);
      ComputeGraph<S> tape;
      StudentOutput<S> out;
      auto parts = student_loss(g, teacher, x, labels, table, cfg, &out);
      const double loss_v = static_cast<double>(parts.total.item());
      detail::check_finite(loss_v, "total loss", epoch, cfg);
      opt.zero_grad();
      tape.backward(parts.total);
      opt.step();
      loss_sum += loss_v;
      ce_sum += parts.ce;
      ec_sum += parts.expected_c;
      om_sum += parts.omega;
      ++batches;
      const auto pred = argmax_rows(out.logits);
      for (std::int64_t i = 0; i < count; ++i) {
        if (pred[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(i)]) ++hits;
      }
      seen += count;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = opt.lr();
    const double b = batches ? static_cast<double>(batches) : 1.0;
    rec.loss = loss_sum / b;
    rec.ce = ce_sum / b;
    rec.expected_c = ec_sum / b;
    rec.omega = om_sum / b;
    rec.train_acc = seen ? static_cast<double>(hits) / static_cast<double>(seen) : 0.0;
    rec.test_acc = evaluate_student(g, task.test, cfg.batch_size, eval_limit);
    for (const auto& [path, alpha] : g.all_alphas()) rec.alphas[path_name(path)] = alpha;
    history.push_back(std::move(rec));
  }
  if (g.backbone->digest() != digest_before) {
    throw std::runtime_error(
        "train_student: frozen backbone weights changed during training");
  }
  return history;
}

// Post-pruning fine-tuning: same loop, but the complexity penalty must be off
// (the architecture is already fixed; only weights may adapt).
template <typename S>
TrainHistory finetune_pruned(StudentGraph<S>& g, Backbone<S>& teacher, const TaskData& task,
                             const ComplexityTable& table, const TrainConfig& cfg,
                             std::int64_t eval_limit = 0) {
  if (cfg.gamma1 != 0) {
    throw std::invalid_argument("finetune_pruned: gamma1 must be 0 after pruning");
  }
  return train_student(g, teacher, task, table, cfg, eval_limit);
}

// One candidate in a pruning sweep, with its full report and final weights.
template <typename S>
struct SweepEntry {
  PruneReport report;
  std::shared_ptr<StudentGraph<S>> graph;  // null when infeasible
  TrainHistory finetune_history;
};

template <typename S>
struct SweepResult {
  std::vector<SweepEntry<S>> entries;
  Selection selection;
  double teacher_accuracy = 0;
};

// For each n: clone the trained student, drop proxies below theta, drop the n
// weakest pretrained blocks, eliminate unreachable paths, fine-tune, and
// re-measure. Candidates that disconnect the classifier are kept in the
// report but marked infeasible.
template <typename S>
SweepResult<S> sweep_and_select(const StudentGraph<S>& trained, Backbone<S>& teacher,
                                double teacher_accuracy, const TaskData& task,
                                const ComplexityTable& table,
                                const std::vector<int>& n_values,
                                const TrainConfig& finetune_cfg,
                                std::int64_t eval_limit = 0) {
  if (n_values.empty()) {
    throw std::invalid_argument("sweep_and_select: n_values must be non-empty");
  }
  if (finetune_cfg.gamma1 != 0) {
    throw std::invalid_argument("sweep_and_select: fine-tuning requires gamma1 == 0");
  }
  SweepResult<S> result;
  result.teacher_accuracy = teacher_accuracy;
  const auto counts_before = trained.param_counts();
  const auto flops_before = trained.total_flops();
  std::vector<SweepCandidate> candidates;
  for (int n : n_values) {
    SweepEntry<S> entry;
    auto& rep = entry.report;
    rep.n_requested = n;
    rep.params_before = counts_before.frozen + counts_before.task_specific;
    rep.flops_before = flops_before;
    auto g = std::make_shared<StudentGraph<S>>(trained.clone());
    try {
      auto removed = prune_proxies(*g, finetune_cfg.theta);
      auto ranked = prune_pretrained(*g, n);
      removed.insert(removed.end(), ranked.begin(), ranked.end());
      auto elim = eliminate_dead_blocks(*g);
      removed.insert(removed.end(), elim.begin(), elim.end());
      rep.removed_paths = std::move(removed);
      rep.feasible = true;
    } catch (const OverPrunedError&) {
      rep.feasible = false;
    } catch (const std::invalid_argument&) {
      rep.feasible = false;  // n exceeds the number of removable blocks
    }
    if (rep.feasible) {
      for (const auto& r : rep.removed_paths) {
        if (r.path.pretrained()) ++rep.n_removed_pretrained;
      }
      rep.acc_teacher = teacher_accuracy;
      rep.acc_pruned = evaluate_student(*g, task.test, finetune_cfg.batch_size, eval_limit);
      entry.finetune_history =
          finetune_pruned(*g, teacher, task, table, finetune_cfg, eval_limit);
      rep.acc_finetuned = evaluate_student(*g, task.test, finetune_cfg.batch_size);
      const auto counts = g->param_counts();
      rep.params_after = counts.frozen + counts.task_specific;
      rep.flops_after = g->total_flops();
      for (const auto& [path, alpha] : g->all_alphas()) {
        if (!path.pretrained() && alpha < finetune_cfg.theta) {
          ++rep.proxies_below_theta_after_finetune;
        }
      }
      entry.graph = g;
      candidates.push_back({n, rep.params_after, rep.acc_finetuned, true});
    } else {
      candidates.push_back({n, rep.params_before, 0.0, false});
    }
    result.entries.push_back(std::move(entry));
  }
  result.selection = select_leanest(candidates, teacher_accuracy,
                                    finetune_cfg.accuracy_slack);
  return result;
}

}  // namespace nettrim
