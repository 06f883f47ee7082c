#include "nettrim/pipeline.hpp"

#include <fstream>

#include <json.hpp>

namespace nettrim {

using nlohmann::json;

void phase_gen_data(const ExperimentConfig& cfg, const OutDirs& out) {
  fs::create_directories(out.data());
  json meta;
  meta["seed"] = cfg.seed;
  meta["n_train"] = cfg.data.n_train;
  meta["n_test"] = cfg.data.n_test;
  json per = json::object();
  for (const auto& difficulty : difficulties_needed(cfg)) {
    TaskData task = gen_task(difficulty, cfg.data.n_train, cfg.data.n_test, cfg.seed);
    write_idx_images(out.idx(difficulty, "train", "images").string(), task.train.images);
    write_idx_labels(out.idx(difficulty, "train", "labels").string(), task.train.labels,
                     task.train.num_classes);
    write_idx_images(out.idx(difficulty, "test", "images").string(), task.test.images);
    write_idx_labels(out.idx(difficulty, "test", "labels").string(), task.test.labels,
                     task.test.num_classes);
    json d;
    d["num_classes"] = task.train.num_classes;
    d["linear_probe_accuracy"] = linear_probe_accuracy(task);
    per[difficulty] = std::move(d);
  }
  meta["difficulties"] = std::move(per);
  std::ofstream os(out.data() / "meta.json", std::ios::trunc);
  if (!os) throw std::runtime_error("gen-data: cannot write meta.json");
  os << meta.dump(2) << '\n';
}

TaskData load_task(const ExperimentConfig& cfg, const OutDirs& out,
                   const std::string& difficulty) {
  const auto train_images = out.idx(difficulty, "train", "images");
  require_artifact(train_images, "gen-data");
  TaskData task;
  task.difficulty = difficulty;
  task.seed = cfg.seed;
  task.train = read_idx(train_images.string(),
                        out.idx(difficulty, "train", "labels").string());
  task.train.split = "train";
  task.test = read_idx(out.idx(difficulty, "test", "images").string(),
                       out.idx(difficulty, "test", "labels").string());
  task.test.split = "test";
  task.train.validate();
  task.test.validate();
  return task;
}

std::string selection_to_json(const std::vector<SweepCandidate>& candidates,
                              const Selection& selection, double teacher_accuracy,
                              const std::vector<int>& n_values) {
  json j;
  j["teacher_accuracy"] = teacher_accuracy;
  j["n_values"] = n_values;
  j["selected_index"] = selection.index;
  j["any_qualified"] = selection.any_qualified;
  j["selected_n"] = selection.index >= 0
                        ? candidates[static_cast<std::size_t>(selection.index)].n
                        : -1;
  json arr = json::array();
  for (const auto& c : candidates) {
    arr.push_back({{"n", c.n},
                   {"params", c.params},
                   {"accuracy", c.accuracy},
                   {"feasible", c.feasible}});
  }
  j["candidates"] = std::move(arr);
  return j.dump(2) + "\n";
}

namespace {

json read_json_file(const fs::path& p, const std::string& produced_by) {
  require_artifact(p, produced_by);
  std::ifstream is(p);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("report: unreadable " + p.string() + ": " + e.what());
  }
  return j;
}

}  // namespace

void phase_report(const ExperimentConfig& cfg, const OutDirs& out) {
  std::vector<TaskSummaryRow> rows;
  for (const auto& task : cfg.tasks) {
    TaskSummaryRow row;
    row.task = task;
    row.seed = cfg.seed;

    auto teacher = load_state_dir(out.teacher(task));
    row.teacher_acc = std::stod(meta_get(teacher.meta, "accuracy", out.teacher(task)));

    require_artifact(out.student(task) / "manifest.json", "tailor --task " + task);
    auto student = load_state_dir(out.student(task));
    row.student_acc = std::stod(meta_get(student.meta, "accuracy", out.student(task)));
    row.frozen_params =
        std::stoll(meta_get(student.meta, "frozen_params", out.student(task)));
    row.task_params_dense =
        std::stoll(meta_get(student.meta, "task_params", out.student(task)));
    row.flops_dense = std::stoll(meta_get(student.meta, "flops", out.student(task)));

    auto selection = read_json_file(out.sweep(task) / "selection.json",
                                    "sweep --task " + task);
    row.any_qualified = selection.value("any_qualified", false);
    row.selected_n = selection.value("selected_n", -1);
    for (const auto& c : selection["candidates"]) {
      if (c["n"].get<int>() == row.selected_n) {
        row.selected_acc = c["accuracy"].get<double>();
        row.params_selected = c["params"].get<std::int64_t>();
      }
    }
    auto chosen = read_json_file(
        out.sweep(task) / ("prune-n" + std::to_string(row.selected_n) + ".json"),
        "sweep --task " + task);
    row.flops_selected = chosen.value("flops_after", std::int64_t{0});
    row.blocks_removed = chosen.value("n_removed_pretrained", 0);

    auto selected = load_state_dir(out.sweep(task) / "selected");
    for (const PathId& p : alive_from_string(
             meta_get(selected.meta, "alive", out.sweep(task) / "selected"))) {
      if (!p.pretrained()) ++row.proxies_alive;
    }
    rows.push_back(std::move(row));
  }
  write_summary_csv((out.root / "summary.csv").string(), rows);
  std::ofstream os(out.root / "report.json", std::ios::trunc);
  if (!os) throw std::runtime_error("report: cannot write report.json");
  os << summary_to_json(rows);
}

}  // namespace nettrim
