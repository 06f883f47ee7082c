// Command-line front end: data generation, backbone pretraining, per-task
// teachers, gated tailoring, pruning sweeps, reports, and self-checks.
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "nettrim/config.hpp"
#include "nettrim/pipeline.hpp"
#include "nettrim/verify.hpp"

namespace {

using namespace nettrim;

std::vector<std::string> tasks_to_run(const ExperimentConfig& cfg, const std::string& task) {
  if (task.empty()) return cfg.tasks;
  bool known = false;
  for (const auto& t : cfg.tasks) known = known || t == task;
  if (!known) {
    throw std::runtime_error("task '" + task + "' is not in the configured task list");
  }
  return {task};
}

template <typename S>
int run_command(const std::string& command, const ExperimentConfig& cfg, const OutDirs& out,
                const std::string& task, int n) {
  if (command == "gen-data") {
    phase_gen_data(cfg, out);
    std::cout << "gen-data: wrote " << difficulties_needed(cfg).size()
              << " difficulties under " << out.data().string() << "\n";
    return 0;
  }
  if (command == "pretrain") {
    phase_pretrain<S>(cfg, out);
    auto loaded = load_state_dir(out.backbone());
    std::cout << "pretrain: source accuracy "
              << meta_get(loaded.meta, "accuracy", out.backbone()) << "\n";
    return 0;
  }
  if (command == "teach") {
    for (const auto& t : tasks_to_run(cfg, task)) {
      phase_teach<S>(cfg, out, t);
      auto loaded = load_state_dir(out.teacher(t));
      std::cout << "teach[" << t << "]: accuracy "
                << meta_get(loaded.meta, "accuracy", out.teacher(t)) << "\n";
    }
    return 0;
  }
  if (command == "tailor") {
    for (const auto& t : tasks_to_run(cfg, task)) {
      phase_tailor<S>(cfg, out, t);
      auto loaded = load_state_dir(out.student(t));
      std::cout << "tailor[" << t << "]: accuracy "
                << meta_get(loaded.meta, "accuracy", out.student(t)) << ", E[C] "
                << meta_get(loaded.meta, "expected_complexity", out.student(t)) << "\n";
    }
    return 0;
  }
  if (command == "prune") {
    for (const auto& t : tasks_to_run(cfg, task)) {
      PruneReport rep = phase_prune<S>(cfg, out, t, n);
      std::cout << "prune[" << t << "] n=" << n << ": "
                << (rep.feasible ? "accuracy " + std::to_string(rep.acc_finetuned)
                                 : std::string("infeasible"))
                << "\n";
    }
    return 0;
  }
  if (command == "sweep") {
    for (const auto& t : tasks_to_run(cfg, task)) {
      auto result = phase_sweep<S>(cfg, out, t);
      const int idx = result.selection.index;
      std::cout << "sweep[" << t << "]: selected n="
                << (idx >= 0 ? std::to_string(result.entries[static_cast<std::size_t>(idx)]
                                                  .report.n_requested)
                             : std::string("none"))
                << (result.selection.any_qualified ? "" : " (no candidate met the slack)")
                << "\n";
    }
    return 0;
  }
  if (command == "report") {
    phase_report(cfg, out);
    std::cout << "report: wrote " << (out.root / "summary.csv").string() << " and "
              << (out.root / "report.json").string() << "\n";
    return 0;
  }
  throw std::logic_error("unhandled command " + command);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nettrim: gated low-cost adapters over a frozen backbone"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  int threads = 0;
  bool strict_fp = false;
  std::string task;
  int n = 0;

  app.add_option("--config", config_path, "experiment config (JSON)");
  app.add_option("--out", out_dir, "artifact directory")->capture_default_str();
  auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
  app.add_option("--threads", threads, "math threads (0 = library default)");
  app.add_flag("--strict-fp", strict_fp, "double precision everywhere, single thread");

  CLI::App* cmd_gen = app.add_subcommand("gen-data", "render datasets to IDX files");
  CLI::App* cmd_pre = app.add_subcommand("pretrain", "train the source backbone");
  CLI::App* cmd_teach = app.add_subcommand("teach", "fine-tune per-task teachers");
  CLI::App* cmd_tailor = app.add_subcommand("tailor", "train the gated student");
  CLI::App* cmd_prune = app.add_subcommand("prune", "prune once and fine-tune");
  CLI::App* cmd_sweep = app.add_subcommand("sweep", "prune across n values and select");
  CLI::App* cmd_report = app.add_subcommand("report", "summarize artifacts");
  CLI::App* cmd_verify = app.add_subcommand("verify", "run fast self-checks");
  for (CLI::App* c : {cmd_teach, cmd_tailor, cmd_prune, cmd_sweep}) {
    c->add_option("--task", task, "restrict to one task");
  }
  cmd_prune->add_option("--n", n, "pre-trained blocks to remove")->capture_default_str();
  // Let global options (--out, --seed, ...) appear after the subcommand name.
  for (CLI::App* c : {cmd_gen, cmd_pre, cmd_teach, cmd_tailor, cmd_prune, cmd_sweep,
                      cmd_report, cmd_verify}) {
    c->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (strict_fp) threads = 1;
    if (threads > 0) {
      Eigen::setNbThreads(threads);
#ifdef _OPENMP
      omp_set_num_threads(threads);
#endif
    }

    if (cmd_verify->parsed()) {
      const auto results = run_verify();
      bool all_pass = true;
      for (const auto& r : results) {
        all_pass = all_pass && r.pass;
        std::cout << "verify " << r.name << ": " << (r.pass ? "pass" : "FAIL") << " ("
                  << r.detail << ")\n";
      }
      std::cout << (all_pass ? "verify: all checks passed" : "verify: FAILURES above")
                << "\n";
      return all_pass ? 0 : 1;
    }

    ExperimentConfig cfg =
        config_path.empty() ? default_experiment_config() : load_config(config_path);
    if (seed_opt->count() > 0) cfg.seed = seed;
    cfg.validate();

    OutDirs out{out_dir};
    fs::create_directories(out.root);
    save_config((out.root / "config.json").string(), cfg);

    const std::string command = app.get_subcommands().front()->get_name();
    (void)cmd_gen;
    (void)cmd_pre;
    (void)cmd_report;
    return strict_fp ? run_command<double>(command, cfg, out, task, n)
                     : run_command<float>(command, cfg, out, task, n);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
