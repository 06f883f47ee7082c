#include "nettrim/pruner.hpp"

namespace nettrim {

Elimination eliminate_dead_paths(int L, const std::set<PathId>& alive) {
  Elimination e;
  e.reachable.assign(static_cast<std::size_t>(L + 1), false);
  e.useful.assign(static_cast<std::size_t>(L + 1), false);
  auto input_node = [](PathId p) { return p.pretrained() ? p.dst - 1 : p.src; };

  // Forward pass: inputs of every path precede its output node, so one
  // ascending sweep reaches the fixed point.
  e.reachable[0] = true;
  for (int l = 1; l <= L; ++l) {
    for (PathId p : alive) {
      if (p.dst == l && e.reachable[static_cast<std::size_t>(input_node(p))]) {
        e.reachable[static_cast<std::size_t>(l)] = true;
        break;
      }
    }
  }
  // Backward pass: a node is useful if some alive path consumes it and leads
  // to a useful node.
  e.useful[static_cast<std::size_t>(L)] = true;
  for (int m = L - 1; m >= 0; --m) {
    for (PathId p : alive) {
      if (input_node(p) == m && e.useful[static_cast<std::size_t>(p.dst)]) {
        e.useful[static_cast<std::size_t>(m)] = true;
        break;
      }
    }
  }
  e.classifier_reachable = e.reachable[static_cast<std::size_t>(L)];

  for (PathId p : alive) {
    const bool in_ok = e.reachable[static_cast<std::size_t>(input_node(p))];
    const bool out_ok = e.useful[static_cast<std::size_t>(p.dst)];
    if (in_ok && out_ok) {
      e.live.insert(p);
    } else {
      e.removed[p] = in_ok ? "output-dead" : "input-dead";
    }
  }
  return e;
}

Selection select_leanest(const std::vector<SweepCandidate>& candidates, double acc_teacher,
                         double slack) {
  if (candidates.empty()) {
    throw std::invalid_argument("select_leanest: no candidates");
  }
  if (slack < 0.0) {
    throw std::invalid_argument("select_leanest: slack must be >= 0");
  }
  Selection sel;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    if (!c.feasible || c.accuracy < acc_teacher - slack) continue;
    if (!sel.any_qualified) {
      sel.index = static_cast<int>(i);
      sel.any_qualified = true;
      continue;
    }
    const auto& best = candidates[static_cast<std::size_t>(sel.index)];
    const bool better = c.params < best.params ||
                        (c.params == best.params && c.accuracy > best.accuracy) ||
                        (c.params == best.params && c.accuracy == best.accuracy && c.n < best.n);
    if (better) sel.index = static_cast<int>(i);
  }
  if (!sel.any_qualified) {
    // Fall back to the n = 0 candidate.
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (candidates[i].n == 0 && candidates[i].feasible) {
        sel.index = static_cast<int>(i);
        return sel;
      }
    }
    // Degenerate input without an n = 0 entry: report the most accurate one.
    std::size_t best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i) {
      if (candidates[i].accuracy > candidates[best].accuracy) best = i;
    }
    sel.index = static_cast<int>(best);
  }
  return sel;
}

}  // namespace nettrim
