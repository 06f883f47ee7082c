// End-to-end phases behind the CLI: artifact layout, phase execution, and
// loading of upstream artifacts with errors that name the command to run.
//
//   out/
//     config.json                  effective configuration echo
//     data/<difficulty>-{train,test}-{images,labels}.idx + data/meta.json
//     backbone/                    pretrained weights (state dir) + history.csv
//     <task>/teacher/              fine-tuned teacher + history.csv
//     <task>/student/              tailored student + history, gates, DOT, E[C]
//     <task>/sweep/                per-n prune reports, selection.json, selected/
//     summary.csv, report.json     final cross-task summary
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nettrim/backbone.hpp"
#include "nettrim/checkpoint.hpp"
#include "nettrim/complexity.hpp"
#include "nettrim/config.hpp"
#include "nettrim/datagen.hpp"
#include "nettrim/report.hpp"
#include "nettrim/student.hpp"
#include "nettrim/trainer.hpp"

namespace nettrim {

namespace fs = std::filesystem;

// ---- artifact layout --------------------------------------------------------

struct OutDirs {
  fs::path root;

  fs::path data() const { return root / "data"; }
  fs::path backbone() const { return root / "backbone"; }
  fs::path task(const std::string& t) const { return root / t; }
  fs::path teacher(const std::string& t) const { return task(t) / "teacher"; }
  fs::path student(const std::string& t) const { return task(t) / "student"; }
  fs::path sweep(const std::string& t) const { return task(t) / "sweep"; }

  fs::path idx(const std::string& difficulty, const std::string& split,
               const std::string& what) const {
    return data() / (difficulty + "-" + split + "-" + what + ".idx");
  }
};

inline void require_artifact(const fs::path& p, const std::string& produced_by) {
  if (!fs::exists(p)) {
    throw std::runtime_error("missing artifact " + p.string() + "; run `nettrim " +
                             produced_by + "` first");
  }
}

// Data splits a run needs: the source task plus every target task, once each.
inline std::vector<std::string> difficulties_needed(const ExperimentConfig& cfg) {
  std::vector<std::string> out{"source"};
  for (const auto& t : cfg.tasks) {
    bool seen = false;
    for (const auto& d : out) seen = seen || d == t;
    if (!seen) out.push_back(t);
  }
  return out;
}

// ---- small meta helpers -----------------------------------------------------

inline std::string meta_get(const std::map<std::string, std::string>& meta,
                            const std::string& key, const fs::path& where) {
  auto it = meta.find(key);
  if (it == meta.end()) {
    throw std::runtime_error("checkpoint " + where.string() + " lacks meta key '" + key +
                             "'");
  }
  return it->second;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string alive_to_string(const std::set<PathId>& alive) {
  std::string out;
  for (const PathId& p : alive) {
    if (!out.empty()) out += ",";
    out += path_name(p);
  }
  return out;
}

inline std::set<PathId> alive_from_string(const std::string& text) {
  std::set<PathId> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.insert(parse_path_name(item));
  }
  return out;
}

// ---- gen-data ---------------------------------------------------------------

void phase_gen_data(const ExperimentConfig& cfg, const OutDirs& out);

TaskData load_task(const ExperimentConfig& cfg, const OutDirs& out,
                   const std::string& difficulty);

// ---- pretrain ---------------------------------------------------------------

template <typename S>
void phase_pretrain(const ExperimentConfig& cfg, const OutDirs& out) {
  TaskData source = load_task(cfg, out, "source");
  Backbone<S> net = build_backbone<S>(cfg.plan(), Rng(cfg.seed).split("backbone").state());
  TrainConfig tc = cfg.pretrain;
  tc.seed = Rng(cfg.seed).split("pretrain").state();
  auto history = train_backbone(net, source, tc, cfg.eval_limit);
  const double acc = evaluate_backbone(net, source.test, tc.batch_size);
  std::map<std::string, std::string> meta{{"phase", "pretrain"},
                                          {"seed", std::to_string(cfg.seed)},
                                          {"accuracy", format_double(acc)}};
  save_state_dir(out.backbone(), net.state(), meta);
  write_history_csv((out.backbone() / "history.csv").string(), history);
}

template <typename S>
Backbone<S> load_backbone(const ExperimentConfig& cfg, const OutDirs& out) {
  require_artifact(out.backbone() / "manifest.json", "pretrain");
  Backbone<S> net = build_backbone<S>(cfg.plan(), Rng(cfg.seed).split("backbone").state());
  auto loaded = load_state_dir(out.backbone());
  auto state = net.state();
  restore_state(state, loaded);
  return net;
}

// ---- teach ------------------------------------------------------------------

template <typename S>
void phase_teach(const ExperimentConfig& cfg, const OutDirs& out, const std::string& task) {
  Backbone<S> base = load_backbone<S>(cfg, out);
  TaskData data = load_task(cfg, out, task);
  TrainConfig tc = cfg.teacher;
  tc.seed = Rng(cfg.seed).split("teacher").split(task).state();
  Teacher<S> teacher = train_teacher(base, data, tc);
  std::map<std::string, std::string> meta{{"phase", "teach"},
                                          {"task", task},
                                          {"seed", std::to_string(cfg.seed)},
                                          {"num_classes",
                                           std::to_string(data.train.num_classes)},
                                          {"accuracy", format_double(teacher.accuracy)}};
  save_state_dir(out.teacher(task), teacher.net->state(), meta);
  write_history_csv((out.teacher(task) / "history.csv").string(), teacher.history);
}

template <typename S>
Teacher<S> load_teacher(const ExperimentConfig& cfg, const OutDirs& out,
                        const std::string& task) {
  require_artifact(out.teacher(task) / "manifest.json", "teach --task " + task);
  Teacher<S> teacher;
  teacher.net = std::make_shared<Backbone<S>>(
      build_backbone<S>(cfg.plan(), Rng(cfg.seed).split("backbone").state()));
  auto loaded = load_state_dir(out.teacher(task));
  rehead(*teacher.net,
         std::stoll(meta_get(loaded.meta, "num_classes", out.teacher(task))),
         Rng(cfg.seed).split("head"));
  auto state = teacher.net->state();
  restore_state(state, loaded);
  teacher.accuracy =
      std::stod(meta_get(loaded.meta, "accuracy", out.teacher(task)));
  return teacher;
}

// ---- tailor -----------------------------------------------------------------

template <typename S>
StudentGraph<S> build_student(const ExperimentConfig& cfg,
                              std::shared_ptr<Backbone<S>> backbone,
                              const std::string& task) {
  return attach_proxies<S>(std::move(backbone), cfg.k, task_class_count(task),
                           Rng(cfg.seed).split("student").split(task).state());
}

template <typename S>
void phase_tailor(const ExperimentConfig& cfg, const OutDirs& out, const std::string& task) {
  auto backbone = std::make_shared<Backbone<S>>(load_backbone<S>(cfg, out));
  Teacher<S> teacher = load_teacher<S>(cfg, out, task);
  TaskData data = load_task(cfg, out, task);
  StudentGraph<S> g = build_student<S>(cfg, backbone, task);
  ComplexityTable table = make_complexity_table(cfg.plan(), cfg.k);
  TrainConfig tc = cfg.student;
  tc.seed = Rng(cfg.seed).split("tailor").split(task).state();
  auto history = train_student(g, *teacher.net, data, table, tc, cfg.eval_limit);
  const double acc = evaluate_student(g, data.test, tc.batch_size);
  const std::map<PathId, double> alphas = g.all_alphas();
  const double ec = expected_network_complexity(exclusion_r(g), g.alive, table, g.depth());
  const auto counts = g.param_counts();
  std::map<std::string, std::string> meta{
      {"phase", "tailor"},
      {"task", task},
      {"seed", std::to_string(cfg.seed)},
      {"accuracy", format_double(acc)},
      {"teacher_accuracy", format_double(teacher.accuracy)},
      {"expected_complexity", format_double(ec)},
      {"frozen_params", std::to_string(counts.frozen)},
      {"task_params", std::to_string(counts.task_specific)},
      {"flops", std::to_string(g.total_flops())},
      {"k", std::to_string(g.k)},
      {"num_classes", std::to_string(g.num_classes)},
      {"alive", alive_to_string(g.alive)}};
  save_state_dir(out.student(task), g.task_state(), meta);
  write_history_csv((out.student(task) / "history.csv").string(), history);
  write_alpha_snapshots((out.student(task) / "alphas.json").string(), history);
  {
    std::ofstream os(out.student(task) / "graph.dot", std::ios::trunc);
    os << student_dot(g.depth(), g.alive, alphas);
  }
  {
    std::ofstream os(out.student(task) / "complexity.json", std::ios::trunc);
    os << complexity_report_json(table, alphas, g.alive, ec);
  }
}

// Rebuilds the student skeleton deterministically, then restores weights,
// gates, and the alive set from a saved state dir.
template <typename S>
StudentGraph<S> load_student(const ExperimentConfig& cfg, const OutDirs& out,
                             const std::string& task, const fs::path& dir,
                             std::shared_ptr<Backbone<S>> backbone,
                             const std::string& produced_by) {
  require_artifact(dir / "manifest.json", produced_by);
  StudentGraph<S> g = build_student<S>(cfg, std::move(backbone), task);
  auto loaded = load_state_dir(dir);
  g.alive = alive_from_string(meta_get(loaded.meta, "alive", dir));
  auto state = g.task_state();
  restore_state(state, loaded);
  return g;
}

// ---- prune / sweep ----------------------------------------------------------

template <typename S>
PruneReport phase_prune(const ExperimentConfig& cfg, const OutDirs& out,
                        const std::string& task, int n) {
  auto backbone = std::make_shared<Backbone<S>>(load_backbone<S>(cfg, out));
  Teacher<S> teacher = load_teacher<S>(cfg, out, task);
  TaskData data = load_task(cfg, out, task);
  StudentGraph<S> trained = load_student<S>(cfg, out, task, out.student(task), backbone,
                                            "tailor --task " + task);
  ComplexityTable table = make_complexity_table(cfg.plan(), cfg.k);
  TrainConfig fc = cfg.finetune;
  fc.seed = Rng(cfg.seed).split("finetune").split(task).split(static_cast<std::uint64_t>(n))
                .state();
  auto result = sweep_and_select(trained, *teacher.net, teacher.accuracy, data, table, {n},
                                 fc, cfg.eval_limit);
  const auto& entry = result.entries.front();
  fs::create_directories(out.task(task));
  {
    std::ofstream os(out.task(task) / ("prune-n" + std::to_string(n) + ".json"),
                     std::ios::trunc);
    os << prune_report_to_json(entry.report);
  }
  if (entry.graph) {
    std::map<std::string, std::string> meta{{"phase", "prune"},
                                            {"task", task},
                                            {"seed", std::to_string(cfg.seed)},
                                            {"accuracy",
                                             format_double(entry.report.acc_finetuned)}};
    meta["k"] = std::to_string(entry.graph->k);
    meta["num_classes"] = std::to_string(entry.graph->num_classes);
    meta["alive"] = alive_to_string(entry.graph->alive);
    save_state_dir(out.task(task) / ("pruned-n" + std::to_string(n)),
                   entry.graph->task_state(), meta);
  }
  return entry.report;
}

std::string selection_to_json(const std::vector<SweepCandidate>& candidates,
                              const Selection& selection, double teacher_accuracy,
                              const std::vector<int>& n_values);

template <typename S>
SweepResult<S> phase_sweep(const ExperimentConfig& cfg, const OutDirs& out,
                           const std::string& task) {
  auto backbone = std::make_shared<Backbone<S>>(load_backbone<S>(cfg, out));
  Teacher<S> teacher = load_teacher<S>(cfg, out, task);
  TaskData data = load_task(cfg, out, task);
  StudentGraph<S> trained = load_student<S>(cfg, out, task, out.student(task), backbone,
                                            "tailor --task " + task);
  ComplexityTable table = make_complexity_table(cfg.plan(), cfg.k);
  TrainConfig fc = cfg.finetune;
  fc.seed = Rng(cfg.seed).split("finetune").split(task).state();
  auto result = sweep_and_select(trained, *teacher.net, teacher.accuracy, data, table,
                                 cfg.n_values, fc, cfg.eval_limit);
  fs::create_directories(out.sweep(task));
  std::vector<SweepCandidate> candidates;
  for (std::size_t i = 0; i < result.entries.size(); ++i) {
    const auto& entry = result.entries[i];
    std::ofstream os(out.sweep(task) /
                         ("prune-n" + std::to_string(entry.report.n_requested) + ".json"),
                     std::ios::trunc);
    os << prune_report_to_json(entry.report);
    SweepCandidate c;
    c.n = entry.report.n_requested;
    c.feasible = entry.report.feasible;
    c.accuracy = entry.report.acc_finetuned;
    if (entry.graph) c.params = entry.graph->param_counts().task_specific;
    candidates.push_back(c);
  }
  {
    std::ofstream os(out.sweep(task) / "selection.json", std::ios::trunc);
    os << selection_to_json(candidates, result.selection, teacher.accuracy, cfg.n_values);
  }
  if (result.selection.index >= 0) {
    auto& chosen = result.entries[static_cast<std::size_t>(result.selection.index)];
    if (chosen.graph) {
      std::map<std::string, std::string> meta{
          {"phase", "sweep"},
          {"task", task},
          {"seed", std::to_string(cfg.seed)},
          {"selected_n", std::to_string(chosen.report.n_requested)},
          {"accuracy", format_double(chosen.report.acc_finetuned)}};
      meta["k"] = std::to_string(chosen.graph->k);
      meta["num_classes"] = std::to_string(chosen.graph->num_classes);
      meta["alive"] = alive_to_string(chosen.graph->alive);
      save_state_dir(out.sweep(task) / "selected", chosen.graph->task_state(), meta);
      std::ofstream os(out.sweep(task) / "selected" / "graph.dot", std::ios::trunc);
      os << student_dot(chosen.graph->depth(), chosen.graph->alive,
                        chosen.graph->all_alphas());
    }
  }
  return result;
}

// ---- report -----------------------------------------------------------------

void phase_report(const ExperimentConfig& cfg, const OutDirs& out);

}  // namespace nettrim
