#pragma once

#include "nettrim/complexity.hpp"
#include "nettrim/ops.hpp"
#include "nettrim/tensor.hpp"

#include <cstdint>
#include <set>

namespace nettrim {

// Brute-force references.  These deliberately avoid the production code paths
// (direct loops, exhaustive enumeration) so they can catch errors in them.

struct UnionProbResult {
  double true_union = 0.0;  // exact (or Monte-Carlo) P(R_self ∪ R_inp ∪ R_out)
  double approx = 0.0;      // Eq. 6 as implemented: r + P_inp + P_out
  double gap = 0.0;         // approx - true_union (≥ 0 up to MC noise)
};

// Enumerates all 2^P independent self-exclusion configurations (P = alive
// paths) and measures the true union probability of the three exclusion
// events for `path`.  P > 20 requires monte_carlo with ≥ 1e6 samples.
UnionProbResult union_prob_oracle(const RMap& r, const AliveSet& alive, PathId path, int L,
                                  ComplexityOptions opts = {}, bool monte_carlo = false,
                                  std::uint64_t mc_samples = 1000000,
                                  std::uint64_t mc_seed = 7);

// A path survives iff it lies on at least one complete input→classifier route
// over alive paths.  Exponential route enumeration; use on small graphs only.
std::set<PathId> live_paths_by_route_enumeration(int L, const AliveSet& alive);

// Direct-sum convolution, independent of the im2col/GEMM path.
TensorD naive_conv2d(const TensorD& x, const TensorD& w, const TensorD& b, Conv2dSpec spec);

}  // namespace nettrim
