#include "nettrim/report.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace nettrim {

using nlohmann::json;

void write_history_csv(const std::string& path, const TrainHistory& history) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("report: cannot write " + path);
  os << "epoch,lr,loss,ce,expected_c,omega,train_acc,test_acc\n";
  os.precision(10);
  for (const auto& r : history) {
    os << r.epoch << ',' << r.lr << ',' << r.loss << ',' << r.ce << ',' << r.expected_c
       << ',' << r.omega << ',' << r.train_acc << ',' << r.test_acc << '\n';
  }
}

void write_alpha_snapshots(const std::string& path, const TrainHistory& history) {
  json arr = json::array();
  for (const auto& r : history) {
    json e;
    e["epoch"] = r.epoch;
    e["alphas"] = r.alphas;
    arr.push_back(std::move(e));
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("report: cannot write " + path);
  os << arr.dump(2) << '\n';
}

namespace {

json removal_to_json(const RemovalRecord& r) {
  return {{"path", path_name(r.path)}, {"reason", r.reason}, {"alpha", r.alpha}};
}

RemovalRecord removal_from_json(const json& j) {
  RemovalRecord r;
  r.path = parse_path_name(j.at("path").get<std::string>());
  r.reason = j.at("reason").get<std::string>();
  r.alpha = j.value("alpha", 0.0);
  return r;
}

}  // namespace

std::string prune_report_to_json(const PruneReport& report) {
  json j;
  j["n_requested"] = report.n_requested;
  j["feasible"] = report.feasible;
  j["n_removed_pretrained"] = report.n_removed_pretrained;
  j["params_before"] = report.params_before;
  j["params_after"] = report.params_after;
  j["flops_before"] = report.flops_before;
  j["flops_after"] = report.flops_after;
  j["acc_teacher"] = report.acc_teacher;
  j["acc_pruned"] = report.acc_pruned;
  j["acc_finetuned"] = report.acc_finetuned;
  j["proxies_below_theta_after_finetune"] = report.proxies_below_theta_after_finetune;
  json removed = json::array();
  for (const auto& r : report.removed_paths) removed.push_back(removal_to_json(r));
  j["removed_paths"] = std::move(removed);
  return j.dump(2) + "\n";
}

PruneReport prune_report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("report: invalid prune report JSON: ") + e.what());
  }
  PruneReport r;
  r.n_requested = j.value("n_requested", 0);
  r.feasible = j.value("feasible", false);
  r.n_removed_pretrained = j.value("n_removed_pretrained", 0);
  r.params_before = j.value("params_before", std::int64_t{0});
  r.params_after = j.value("params_after", std::int64_t{0});
  r.flops_before = j.value("flops_before", std::int64_t{0});
  r.flops_after = j.value("flops_after", std::int64_t{0});
  r.acc_teacher = j.value("acc_teacher", 0.0);
  r.acc_pruned = j.value("acc_pruned", 0.0);
  r.acc_finetuned = j.value("acc_finetuned", 0.0);
  r.proxies_below_theta_after_finetune = j.value("proxies_below_theta_after_finetune", 0);
  if (j.contains("removed_paths")) {
    for (const auto& e : j["removed_paths"]) r.removed_paths.push_back(removal_from_json(e));
  }
  return r;
}

void write_summary_csv(const std::string& path, const std::vector<TaskSummaryRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("report: cannot write " + path);
  os << "task,seed,teacher_acc,student_acc,selected_n,any_qualified,selected_acc,"
        "frozen_params,task_params_dense,params_selected,flops_dense,"
        "flops_selected,blocks_removed,proxies_alive\n";
  os.precision(10);
  for (const auto& r : rows) {
    os << r.task << ',' << r.seed << ',' << r.teacher_acc << ',' << r.student_acc << ','
       << r.selected_n << ',' << (r.any_qualified ? 1 : 0) << ',' << r.selected_acc << ','
       << r.frozen_params << ',' << r.task_params_dense << ',' << r.params_selected
       << ',' << r.flops_dense << ',' << r.flops_selected << ',' << r.blocks_removed << ','
       << r.proxies_alive << '\n';
  }
}

std::string summary_to_json(const std::vector<TaskSummaryRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    arr.push_back({{"task", r.task},
                   {"seed", r.seed},
                   {"teacher_acc", r.teacher_acc},
                   {"student_acc", r.student_acc},
                   {"selected_n", r.selected_n},
                   {"any_qualified", r.any_qualified},
                   {"selected_acc", r.selected_acc},
                   {"frozen_params", r.frozen_params},
                   {"task_params_dense", r.task_params_dense},
                   {"params_selected", r.params_selected},
                   {"flops_dense", r.flops_dense},
                   {"flops_selected", r.flops_selected},
                   {"blocks_removed", r.blocks_removed},
                   {"proxies_alive", r.proxies_alive}});
  }
  return arr.dump(2) + "\n";
}

std::string student_dot(int L, const std::set<PathId>& alive,
                        const std::map<PathId, double>& alphas) {
  std::ostringstream os;
  os << "digraph student {\n  rankdir=LR;\n  node [shape=circle];\n";
  os << "  in [shape=box label=\"input\"];\n  cls [shape=box label=\"classifier\"];\n";
  for (int l = 0; l <= L; ++l) os << "  n" << l << " [label=\"" << l << "\"];\n";
  os << "  in -> n0;\n  n" << L << " -> cls;\n";
  os.precision(3);
  for (const PathId& p : alive) {
    const int from = p.pretrained() ? p.dst - 1 : p.src;
    os << "  n" << from << " -> n" << p.dst;
    os << " [label=\"" << path_name(p);
    auto it = alphas.find(p);
    if (it != alphas.end()) os << " a=" << it->second;
    os << "\"";
    if (!p.pretrained()) os << " style=dashed";
    os << "];\n";
  }
  os << "}\n";
  return os.str();
}

std::string complexity_report_json(const ComplexityTable& table,
                                   const std::map<PathId, double>& alphas,
                                   const std::set<PathId>& alive, double expected_c) {
  json j;
  j["total_pretrained_flops"] = table.total_flops;
  j["expected_complexity"] = expected_c;
  json paths = json::array();
  for (const auto& [p, cost] : table.C) {
    json e;
    e["path"] = path_name(p);
    e["cost"] = cost;
    e["alive"] = alive.count(p) > 0;
    auto it = alphas.find(p);
    if (it != alphas.end()) e["alpha"] = it->second;
    paths.push_back(std::move(e));
  }
  j["paths"] = std::move(paths);
  return j.dump(2) + "\n";
}

}  // namespace nettrim
