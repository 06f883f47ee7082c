#pragma once

#include "nettrim/arch.hpp"
#include "nettrim/student.hpp"

#include <map>
#include <set>
#include <stdexcept>

namespace nettrim {

struct ComplexityOptions {
  // Eq. 9 is evaluated literally by default: the input-exclusion node of a
  // pre-trained block (l,l) is l.  The alternative reading (tensor input,
  // node l-1) is available but not default.
  bool pretrained_input_at_prev = false;
};

// Per-path complexities C_i^j, FLOPs of each block normalized so the
// pre-trained entries sum to exactly 1.
struct ComplexityTable {
  std::map<PathId, double> C;
  std::int64_t total_flops = 0;  // denominator: raw FLOPs of the L pre-trained blocks
};

ComplexityTable make_complexity_table(const BackbonePlan& plan, int k);

using RMap = std::map<PathId, double>;
using AliveSet = std::set<PathId>;

// Derived exclusion probabilities for reports.
struct ExclusionProbs {
  RMap r;                          // r_i^j = 1 - alpha_i^j over alive paths
  std::map<int, double> p_inp;     // node -> P(R_inp)
  std::map<int, double> p_out;     // node -> P(R_out)
};

// Eq. 7: product of r over alive paths merging into node i; 0 at the network
// input boundary (node 0).  Dead paths are certainly excluded (factor 1).
double input_exclusion_prob(const RMap& r, const AliveSet& alive, int node_i);

// Eq. 8: r_{j+1}^{j+1} times the product over alive departing proxies (j,k);
// 0 at the final node (the classifier is never excluded).
double output_exclusion_prob(const RMap& r, const AliveSet& alive, int node_j, int L);

// Eq. 9, literally: E[C_i^j] = C_i^j (1 - r_i^j - P_inp(i) - P_out(j)).
// May be negative; not clamped.
double expected_block_complexity(double c, const RMap& r, const AliveSet& alive, PathId path,
                                 int L, ComplexityOptions opts = {});

// Eq. 10: sum of Eq. 9 over alive paths.
double expected_network_complexity(const RMap& r, const AliveSet& alive,
                                   const ComplexityTable& table, int L,
                                   ComplexityOptions opts = {});

// Per-path breakdown for reports.
std::map<PathId, double> expected_path_costs(const RMap& r, const AliveSet& alive,
                                             const ComplexityTable& table, int L,
                                             ComplexityOptions opts = {});

ExclusionProbs derive_exclusion_probs(const RMap& r, const AliveSet& alive, int L);

// r-values from a student graph's current gates (1 - alpha over alive paths).
template <typename S>
RMap exclusion_r(StudentGraph<S>& g) {
  RMap r;
  for (int l = 1; l <= g.depth(); ++l) {
    if (g.alive_incoming(l).empty()) continue;
    for (const auto& [p, alpha] : g.merge_alphas(l)) r[p] = 1.0 - alpha;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Traced (differentiable) expected complexity, built from the graph's gate
// parameters through tensor ops so that d E[C] / d a flows on the tape.
// ---------------------------------------------------------------------------
template <typename S>
Tensor<S> expected_network_complexity_traced(StudentGraph<S>& g, const ComplexityTable& table,
                                             ComplexityOptions opts = {}) {
  const int L = g.depth();
  const Tensor<S> one = Tensor<S>::scalar(S(1));
  std::map<PathId, Tensor<S>> r;
  for (int l = 1; l <= L; ++l) {
    if (g.alive_incoming(l).empty()) continue;
    auto [paths, alpha] = g.merge_alphas_traced(l);
    for (std::size_t i = 0; i < paths.size(); ++i) {
      r.emplace(paths[i], sub(one, pick(alpha, static_cast<std::int64_t>(i))));
    }
  }
  auto product_of = [&](const std::vector<Tensor<S>>& factors) -> Tensor<S> {
    if (factors.empty()) return Tensor<S>::scalar(S(1));
    if (factors.size() == 1) return factors.front();
    return prod(concat_scalars(factors));
  };
  auto p_inp = [&](int node_i) -> Tensor<S> {
    if (node_i == 0) return Tensor<S>::scalar(S(0));
    std::vector<Tensor<S>> factors;
    for (PathId q : incoming_paths(node_i, g.k)) {
      if (g.alive.count(q)) factors.push_back(r.at(q));
    }
    return product_of(factors);
  };
  // Dead factors are certain exclusions (r = 1) and drop out of the products.
  auto p_out = [&](int node_j) -> Tensor<S> {
    if (node_j == L) return Tensor<S>::scalar(S(0));
    std::vector<Tensor<S>> factors;
    const PathId next{node_j + 1, node_j + 1};
    if (g.alive.count(next)) factors.push_back(r.at(next));
    for (int m = node_j + 1; m <= L; ++m) {
      const PathId q{node_j, m};
      if (!q.pretrained() && g.alive.count(q)) factors.push_back(r.at(q));
    }
    return product_of(factors);
  };
  Tensor<S> total = Tensor<S>::scalar(S(0));
  for (PathId p : g.alive) {
    const double c = table.C.at(p);
    const int input_i = (p.pretrained() && opts.pretrained_input_at_prev) ? p.src - 1 : p.src;
    Tensor<S> keep = sub(sub(sub(one, r.at(p)), p_inp(input_i)), p_out(p.dst));
    total = add(total, scale_const(keep, c));
  }
  return total;
}

}  // namespace nettrim
