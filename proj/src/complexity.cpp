#include "nettrim/complexity.hpp"

#include <stdexcept>

namespace nettrim {

ComplexityTable make_complexity_table(const BackbonePlan& plan, int k) {
  plan.validate();
  const int L = static_cast<int>(plan.depth());
  ComplexityTable table;
  std::int64_t denom = 0;
  for (int l = 1; l <= L; ++l) denom += residual_spec(plan, l).flops;
  table.total_flops = denom;
  double partial = 0.0;
  for (PathId p : all_paths(L, std::min(k, L))) {
    if (p.pretrained()) {
      if (p.dst < L) {
        const double c = static_cast<double>(residual_spec(plan, p.dst).flops) /
                         static_cast<double>(denom);
        table.C[p] = c;
        partial += c;
      } else {
        // Close the normalization exactly: sum of pre-trained C must be 1.
        table.C[p] = 1.0 - partial;
      }
    } else {
      table.C[p] = static_cast<double>(proxy_spec(plan, p).flops) /
                   static_cast<double>(denom);
    }
  }
  return table;
}

namespace {

double r_for(const RMap& r, PathId p) {
  auto it = r.find(p);
  if (it == r.end()) {
    throw std::invalid_argument("complexity: missing r value for alive path " + path_name(p));
  }
  if (it->second < 0.0 || it->second > 1.0) {
    throw std::invalid_argument("complexity: r out of [0,1] for " + path_name(p));
  }
  return it->second;
}

}  // namespace

double input_exclusion_prob(const RMap& r, const AliveSet& alive, int node_i) {
  if (node_i == 0) return 0.0;  // the network input cannot be excluded
  double prob = 1.0;
  for (PathId q : alive) {
    if (q.dst == node_i) prob *= r_for(r, q);
  }
  return prob;
}

double output_exclusion_prob(const RMap& r, const AliveSet& alive, int node_j, int L) {
  if (node_j == L) return 0.0;  // the classifier is never excluded
  double prob = 1.0;
  const PathId next{node_j + 1, node_j + 1};
  if (alive.count(next)) prob *= r_for(r, next);
  for (PathId q : alive) {
    if (!q.pretrained() && q.src == node_j) prob *= r_for(r, q);
  }
  return prob;
}

double expected_block_complexity(double c, const RMap& r, const AliveSet& alive, PathId path,
                                 int L, ComplexityOptions opts) {
  if (!alive.count(path)) {
    throw std::invalid_argument("complexity: path " + path_name(path) + " is not alive");
  }
  const int input_i =
      (path.pretrained() && opts.pretrained_input_at_prev) ? path.src - 1 : path.src;
  const double keep = 1.0 - r_for(r, path) - input_exclusion_prob(r, alive, input_i) -
                      output_exclusion_prob(r, alive, path.dst, L);
  return c * keep;
}

double expected_network_complexity(const RMap& r, const AliveSet& alive,
                                   const ComplexityTable& table, int L,
                                   ComplexityOptions opts) {
  double total = 0.0;
  for (PathId p : alive) {
    auto it = table.C.find(p);
    if (it == table.C.end()) {
      throw std::invalid_argument("complexity: no table entry for alive path " + path_name(p));
    }
    total += expected_block_complexity(it->second, r, alive, p, L, opts);
  }
  return total;
}

std::map<PathId, double> expected_path_costs(const RMap& r, const AliveSet& alive,
                                             const ComplexityTable& table, int L,
                                             ComplexityOptions opts) {
  std::map<PathId, double> out;
  for (PathId p : alive) {
    out[p] = expected_block_complexity(table.C.at(p), r, alive, p, L, opts);
  }
  return out;
}

ExclusionProbs derive_exclusion_probs(const RMap& r, const AliveSet& alive, int L) {
  ExclusionProbs probs;
  probs.r = r;
  for (int node = 0; node <= L; ++node) {
    probs.p_inp[node] = input_exclusion_prob(r, alive, node);
    probs.p_out[node] = output_exclusion_prob(r, alive, node, L);
  }
  return probs;
}

}  // namespace nettrim
