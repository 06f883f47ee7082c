#include "nettrim/oracles.hpp"

#include "nettrim/rng.hpp"

#include <functional>
#include <stdexcept>
#include <vector>

namespace nettrim {

namespace {

// Evaluates the three exclusion events for `path` under one configuration of
// self-exclusion indicators over the alive paths.
bool union_indicator(const std::vector<PathId>& paths, const std::vector<bool>& excluded,
                     PathId path, int L, const ComplexityOptions& opts) {
  auto bit = [&](PathId q) {
    for (std::size_t i = 0; i < paths.size(); ++i) {
      if (paths[i] == q) return static_cast<bool>(excluded[i]);
    }
    return true;  // not alive: certainly excluded
  };
  if (bit(path)) return true;  // R_self
  const int input_i =
      (path.pretrained() && opts.pretrained_input_at_prev) ? path.src - 1 : path.src;
  if (input_i != 0) {  // R_inp: every path merging into node input_i excluded
    bool all = true;
    for (PathId q : paths) {
      if (q.dst == input_i && !bit(q)) {
        all = false;
        break;
      }
    }
    if (all) return true;
  }
  if (path.dst != L) {  // R_out: next block and all departing proxies excluded
    bool all = bit(PathId{path.dst + 1, path.dst + 1});
    if (all) {
      for (PathId q : paths) {
        if (!q.pretrained() && q.src == path.dst && !bit(q)) {
          all = false;
          break;
        }
      }
    }
    if (all) return true;
  }
  return false;
}

}  // namespace

UnionProbResult union_prob_oracle(const RMap& r, const AliveSet& alive, PathId path, int L,
                                  ComplexityOptions opts, bool monte_carlo,
                                  std::uint64_t mc_samples, std::uint64_t mc_seed) {
  if (!alive.count(path)) {
    throw std::invalid_argument("union_prob_oracle: path " + path_name(path) +
                                " is not alive");
  }
  const std::vector<PathId> paths(alive.begin(), alive.end());
  const std::size_t P = paths.size();
  std::vector<double> rv(P);
  for (std::size_t i = 0; i < P; ++i) {
    auto it = r.find(paths[i]);
    if (it == r.end()) {
      throw std::invalid_argument("union_prob_oracle: missing r for " + path_name(paths[i]));
    }
    rv[i] = it->second;
  }

  UnionProbResult res;
  const int input_i =
      (path.pretrained() && opts.pretrained_input_at_prev) ? path.src - 1 : path.src;
  res.approx = r.at(path) + input_exclusion_prob(r, alive, input_i) +
               output_exclusion_prob(r, alive, path.dst, L);

  if (!monte_carlo) {
    if (P > 20) {
      throw std::invalid_argument(
          "union_prob_oracle: " + std::to_string(P) +
          " paths is too many to enumerate; pass monte_carlo with >= 1e6 samples");
    }
    double true_union = 0.0;
    std::vector<bool> excluded(P);
    for (std::uint64_t mask = 0; mask < (std::uint64_t(1) << P); ++mask) {
      double prob = 1.0;
      for (std::size_t i = 0; i < P; ++i) {
        excluded[i] = (mask >> i) & 1;
        prob *= excluded[i] ? rv[i] : (1.0 - rv[i]);
      }
      if (prob == 0.0) continue;
      if (union_indicator(paths, excluded, path, L, opts)) true_union += prob;
    }
    res.true_union = true_union;
  } else {
    if (mc_samples < 1000000) {
      throw std::invalid_argument("union_prob_oracle: Monte-Carlo requires >= 1e6 samples");
    }
    Rng rng(mc_seed);
    std::uint64_t hits = 0;
    std::vector<bool> excluded(P);
    for (std::uint64_t s = 0; s < mc_samples; ++s) {
      for (std::size_t i = 0; i < P; ++i) excluded[i] = rng.uniform() < rv[i];
      if (union_indicator(paths, excluded, path, L, opts)) ++hits;
    }
    res.true_union = static_cast<double>(hits) / static_cast<double>(mc_samples);
  }
  res.gap = res.approx - res.true_union;
  return res;
}

std::set<PathId> live_paths_by_route_enumeration(int L, const AliveSet& alive) {
  // Edges grouped by tensor-input node.
  std::vector<std::vector<PathId>> out_edges(static_cast<std::size_t>(L + 1));
  for (PathId p : alive) {
    const int in = p.pretrained() ? p.dst - 1 : p.src;
    out_edges[static_cast<std::size_t>(in)].push_back(p);
  }
  std::set<PathId> live;
  std::vector<PathId> route;
  std::function<void(int)> dfs = [&](int node) {
    if (node == L) {
      live.insert(route.begin(), route.end());
      return;
    }
    for (PathId e : out_edges[static_cast<std::size_t>(node)]) {
      route.push_back(e);
      dfs(e.dst);
      route.pop_back();
    }
  };
  dfs(0);
  return live;
}

TensorD naive_conv2d(const TensorD& x, const TensorD& w, const TensorD& b, Conv2dSpec spec) {
  const auto n = x.dim(0), ci = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const auto co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const auto ho = conv_out_size(h, kh, spec.stride, spec.pad);
  const auto wo = conv_out_size(ww, kw, spec.stride, spec.pad);
  TensorD y(Shape{n, co, ho, wo});
  for (std::int64_t s = 0; s < n; ++s) {
    for (std::int64_t c = 0; c < co; ++c) {
      for (std::int64_t oi = 0; oi < ho; ++oi) {
        for (std::int64_t oj = 0; oj < wo; ++oj) {
          double acc = b.defined() ? b.at(c) : 0.0;
          for (std::int64_t ic = 0; ic < ci; ++ic) {
            for (std::int64_t ki = 0; ki < kh; ++ki) {
              for (std::int64_t kj = 0; kj < kw; ++kj) {
                const std::int64_t ii = oi * spec.stride - spec.pad + ki;
                const std::int64_t jj = oj * spec.stride - spec.pad + kj;
                if (ii < 0 || ii >= h || jj < 0 || jj >= ww) continue;
                acc += x.at(((s * ci + ic) * h + ii) * ww + jj) *
                       w.at(((c * ci + ic) * kh + ki) * kw + kj);
              }
            }
          }
          y.at(((s * co + c) * ho + oi) * wo + oj) = acc;
        }
      }
    }
  }
  return y;
}

}  // namespace nettrim
