#pragma once

#include "nettrim/arch.hpp"
#include "nettrim/student.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace nettrim {

// Thrown when pruning disconnects the classifier; the sweep treats the
// offending n as infeasible.
struct OverPrunedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Elimination {
  std::set<PathId> live;
  std::map<PathId, std::string> removed;  // reason: input-dead | output-dead
  std::vector<bool> reachable;            // node forward-reachable from input
  std::vector<bool> useful;               // node backward-reaches classifier
  bool classifier_reachable = false;
};

// Fixed-point cascade over alive paths with tensor-input semantics
// (pre-trained block l reads node l-1; proxy (p,l) reads node p): a path
// survives iff its input node is reachable from the network input and its
// output node still reaches the classifier.
Elimination eliminate_dead_paths(int L, const std::set<PathId>& alive);

struct RemovalRecord {
  PathId path;
  std::string reason;  // below-threshold | ranked-out | input-dead | output-dead
  double alpha = 0.0;
};

struct PruneReport {
  std::vector<RemovalRecord> removed_paths;
  int n_removed_pretrained = 0;
  std::int64_t params_before = 0, params_after = 0;
  std::int64_t flops_before = 0, flops_after = 0;
  double acc_teacher = 0.0, acc_pruned = 0.0, acc_finetuned = 0.0;
  bool feasible = true;
  int n_requested = 0;
  int proxies_below_theta_after_finetune = 0;
};

// §3.5 step 1: mark dead every alive proxy whose current gate α < θ, from one
// simultaneous snapshot of the gates.  Pre-trained paths untouched.
template <typename S>
std::vector<RemovalRecord> prune_proxies(StudentGraph<S>& g, double theta) {
  if (theta < 0.0 || theta >= 1.0) {
    throw std::invalid_argument("prune_proxies: theta must be in [0,1)");
  }
  std::vector<RemovalRecord> removed;
  std::map<PathId, double> alphas = g.all_alphas();
  for (const auto& [p, alpha] : alphas) {
    if (!p.pretrained() && alpha < theta) {
      removed.push_back({p, "below-threshold", alpha});
    }
  }
  for (const auto& rec : removed) g.alive.erase(rec.path);
  return removed;
}

// §3.5 step 2: rank alive pre-trained blocks by α_l^l and mark the n smallest
// dead; ties remove the deeper block first.
template <typename S>
std::vector<RemovalRecord> prune_pretrained(StudentGraph<S>& g, int n) {
  if (n < 0) throw std::invalid_argument("prune_pretrained: n must be >= 0");
  std::vector<std::pair<double, PathId>> diag;
  std::map<PathId, double> alphas = g.all_alphas();
  for (const auto& [p, alpha] : alphas) {
    if (p.pretrained() && g.alive.count(p)) diag.emplace_back(alpha, p);
  }
  if (n >= static_cast<int>(diag.size())) {
    throw std::invalid_argument("prune_pretrained: n=" + std::to_string(n) +
                                " but only " + std::to_string(diag.size()) +
                                " alive pre-trained blocks");
  }
  std::sort(diag.begin(), diag.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second.dst > b.second.dst;  // tie: deeper block goes first
  });
  std::vector<RemovalRecord> removed;
  for (int i = 0; i < n; ++i) {
    removed.push_back({diag[static_cast<std::size_t>(i)].second, "ranked-out",
                       diag[static_cast<std::size_t>(i)].first});
    g.alive.erase(diag[static_cast<std::size_t>(i)].second);
  }
  return removed;
}

// §3.4.1 cascade on the discrete graph.  Throws OverPrunedError if the
// classifier input becomes unreachable.
template <typename S>
std::vector<RemovalRecord> eliminate_dead_blocks(StudentGraph<S>& g) {
  Elimination e = eliminate_dead_paths(g.depth(), g.alive);
  if (!e.classifier_reachable) {
    throw OverPrunedError("eliminate_dead_blocks: classifier input node is unreachable");
  }
  std::vector<RemovalRecord> removed;
  for (const auto& [p, reason] : e.removed) {
    removed.push_back({p, reason, 0.0});
    g.alive.erase(p);
  }
  return removed;
}

// §4.1 selection rule over sweep outcomes.
struct SweepCandidate {
  int n = 0;
  std::int64_t params = 0;
  double accuracy = 0.0;
  bool feasible = true;
};

struct Selection {
  int index = -1;  // into the candidate list
  bool any_qualified = false;
};

// Leanest (fewest parameters) among candidates within `slack` of acc_teacher;
// ties prefer higher accuracy, then smaller n.  Falls back to the n = 0
// candidate (flagged) when nothing qualifies.
Selection select_leanest(const std::vector<SweepCandidate>& candidates, double acc_teacher,
                         double slack);

}  // namespace nettrim
