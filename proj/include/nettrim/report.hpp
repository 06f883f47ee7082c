// Human-readable artifacts: training history CSV, gate snapshots, pruning
// reports, per-task summaries, and a Graphviz view of the tailored DAG.
#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "nettrim/arch.hpp"
#include "nettrim/complexity.hpp"
#include "nettrim/pruner.hpp"
#include "nettrim/trainer.hpp"

namespace nettrim {

void write_history_csv(const std::string& path, const TrainHistory& history);

// Gate trajectories: one JSON array entry per epoch with the full alpha map.
void write_alpha_snapshots(const std::string& path, const TrainHistory& history);

std::string prune_report_to_json(const PruneReport& report);
PruneReport prune_report_from_json(const std::string& text);

// One line of the final summary (the quantities behind the headline claim:
// easier task -> fewer retained blocks / fewer task-specific parameters).
struct TaskSummaryRow {
  std::string task;
  std::uint64_t seed = 0;
  double teacher_acc = 0;
  double student_acc = 0;     // dense student before pruning
  int selected_n = -1;
  bool any_qualified = false;
  double selected_acc = 0;
  std::int64_t frozen_params = 0;
  std::int64_t task_params_dense = 0;
  std::int64_t params_selected = 0;  // total (frozen-in-use + task) after pruning
  std::int64_t flops_dense = 0;
  std::int64_t flops_selected = 0;
  int blocks_removed = 0;
  int proxies_alive = 0;
};

void write_summary_csv(const std::string& path, const std::vector<TaskSummaryRow>& rows);
std::string summary_to_json(const std::vector<TaskSummaryRow>& rows);

// Graphviz DOT of a tailored student: nodes 0..L, solid edges for pre-trained
// blocks, dashed for proxies, labeled by gate value.
std::string student_dot(int L, const std::set<PathId>& alive,
                        const std::map<PathId, double>& alphas);

// Complexity accounting for a student: per-path costs, gates, and E[C].
std::string complexity_report_json(const ComplexityTable& table,
                                   const std::map<PathId, double>& alphas,
                                   const std::set<PathId>& alive, double expected_c);

}  // namespace nettrim
