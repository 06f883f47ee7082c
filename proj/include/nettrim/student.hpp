#pragma once

#include "nettrim/arch.hpp"
#include "nettrim/backbone.hpp"
#include "nettrim/nn.hpp"

#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace nettrim {

template <typename S>
struct StudentOutput {
  Tensor<S> logits;
  std::map<int, Tensor<S>> nodes;  // live merge-node activations x_l, l = 1..L
};

struct ParamCounts {
  std::int64_t frozen = 0;         // stem + alive pre-trained blocks
  std::int64_t task_specific = 0;  // alive proxies + classifier + alive a-scalars
  std::int64_t total() const { return frozen + task_specific; }
};

// The augmented network: frozen backbone blocks, trainable proxy blocks, one
// trainable gate scalar per path, and a task-specific classifier.
template <typename S>
struct StudentGraph {
  std::shared_ptr<Backbone<S>> backbone;  // frozen by attach_proxies
  int k = 1;
  std::int64_t num_classes = 2;
  std::map<PathId, ProxyLayer<S>> proxies;
  std::map<PathId, Tensor<S>> a_params;  // scalar gate parameters, all paths
  std::set<PathId> alive;
  LinearLayer<S> classifier;

  int depth() const { return static_cast<int>(backbone->plan.depth()); }

  std::vector<PathId> alive_incoming(int l) const {
    std::vector<PathId> out;
    for (PathId p : incoming_paths(l, k)) {
      if (alive.count(p)) out.push_back(p);
    }
    return out;
  }

  // Tensor-input node of a path: pre-trained block l reads node l-1, proxy
  // (p, l) reads node p.
  static int input_node(PathId p) { return p.pretrained() ? p.dst - 1 : p.src; }

  // Node liveness under alive paths (node 0 is the stem output, always live).
  std::vector<bool> live_nodes() const {
    std::vector<bool> live(static_cast<std::size_t>(depth() + 1), false);
    live[0] = true;
    for (int l = 1; l <= depth(); ++l) {
      for (PathId p : alive_incoming(l)) {
        if (live[static_cast<std::size_t>(input_node(p))]) {
          live[static_cast<std::size_t>(l)] = true;
          break;
        }
      }
    }
    return live;
  }

  // Gate softmax over the alive paths merging into node l (Eq. 3), computed
  // through ops so it is differentiable w.r.t. a_params when traced.
  std::pair<std::vector<PathId>, Tensor<S>> merge_alphas_traced(int l) {
    auto paths = alive_incoming(l);
    if (paths.empty()) {
      throw std::runtime_error("student: node " + std::to_string(l) +
                               " has no alive incoming path");
    }
    std::vector<Tensor<S>> as;
    as.reserve(paths.size());
    for (PathId p : paths) as.push_back(a_params.at(p));
    return {paths, softmax(concat_scalars(as))};
  }

  // Plain-number view of the same gates, for pruning decisions and reports.
  std::map<PathId, double> merge_alphas(int l) {
    auto [paths, alpha] = merge_alphas_traced(l);
    std::map<PathId, double> out;
    for (std::size_t i = 0; i < paths.size(); ++i) {
      out[paths[i]] = static_cast<double>(alpha.data()[static_cast<std::int64_t>(i)]);
    }
    return out;
  }

  std::map<PathId, double> all_alphas() {
    std::map<PathId, double> out;
    for (int l = 1; l <= depth(); ++l) {
      if (alive_incoming(l).empty()) continue;
      auto node = merge_alphas(l);
      out.insert(node.begin(), node.end());
    }
    return out;
  }

  // Eq. 2 forward over the DAG.  Frozen blocks always run their normalization
  // in inference mode (their running statistics are frozen state); proxies and
  // their normalization follow `training`.
  StudentOutput<S> forward(const Tensor<S>& x, bool training) {
    const int L = depth();
    const auto live = live_nodes();
    std::map<int, Tensor<S>> node_x;
    node_x[0] = backbone->stem_forward(x, /*training=*/false);
    for (int l = 1; l <= L; ++l) {
      auto paths = alive_incoming(l);
      if (paths.empty()) continue;  // dead node: nothing merges here
      for (PathId p : paths) {
        if (!live[static_cast<std::size_t>(input_node(p))]) {
          throw std::runtime_error("student: alive path " + path_name(p) +
                                   " reads dead node " + std::to_string(input_node(p)) +
                                   " (run dead-block elimination)");
        }
      }
      auto [order, alpha] = merge_alphas_traced(l);
      Tensor<S> acc;
      for (std::size_t i = 0; i < order.size(); ++i) {
        const PathId p = order[i];
        Tensor<S> term =
            p.pretrained()
                ? backbone->block_forward(p.dst, node_x.at(p.dst - 1), /*training=*/false)
                : proxies.at(p).forward(node_x.at(p.src), training);
        Tensor<S> weighted = scale(term, pick(alpha, static_cast<std::int64_t>(i)));
        acc = acc.defined() ? add(acc, weighted) : weighted;
      }
      node_x[l] = acc;
    }
    if (!node_x.count(L)) {
      throw std::runtime_error("student: classifier input node is dead (over-pruned)");
    }
    StudentOutput<S> out;
    out.logits = classifier.forward(global_avg_pool(node_x.at(L)));
    node_x.erase(0);
    out.nodes = std::move(node_x);
    return out;
  }

  // Trainable tensors: alive proxies, alive gates, classifier.
  std::vector<Tensor<S>> task_params(bool alive_only = true) {
    std::vector<Tensor<S>> out;
    for (auto& [p, proxy] : proxies) {
      if (!alive_only || alive.count(p)) proxy.params(out);
    }
    for (auto& [p, a] : a_params) {
      if (!alive_only || alive.count(p)) out.push_back(a);
    }
    classifier.params(out);
    return out;
  }

  NamedTensors<S> task_state() const {
    NamedTensors<S> out;
    for (const auto& [p, proxy] : proxies) proxy.state(out, "proxy." + path_name(p));
    for (const auto& [p, a] : a_params) out.emplace_back("a." + path_name(p), a);
    classifier.state(out, "classifier");
    return out;
  }

  ParamCounts param_counts() const {
    const auto& plan = backbone->plan;
    ParamCounts c;
    c.frozen = stem_spec(plan).param_count;
    for (int l = 1; l <= depth(); ++l) {
      if (alive.count(PathId{l, l})) c.frozen += residual_spec(plan, l).param_count;
    }
    for (const auto& [p, proxy] : proxies) {
      if (alive.count(p)) c.task_specific += proxy_spec(plan, p).param_count;
    }
    c.task_specific += classifier_spec(plan, num_classes).param_count;
    c.task_specific += static_cast<std::int64_t>(alive.size());  // one gate scalar per path
    return c;
  }

  std::int64_t total_flops() const {
    const auto& plan = backbone->plan;
    std::int64_t f = stem_spec(plan).flops;
    for (PathId p : alive) {
      f += p.pretrained() ? residual_spec(plan, p.dst).flops : proxy_spec(plan, p).flops;
    }
    f += classifier_spec(plan, num_classes).flops;
    return f;
  }

  StudentGraph clone() const {
    StudentGraph copy = *this;  // shares the frozen backbone on purpose
    for (auto& [p, proxy] : copy.proxies) {
      proxy.conv.w = proxy.conv.w.clone();
      proxy.bn.gamma = proxy.bn.gamma.clone();
      proxy.bn.beta = proxy.bn.beta.clone();
      proxy.bn.running_mean = proxy.bn.running_mean.clone();
      proxy.bn.running_var = proxy.bn.running_var.clone();
    }
    for (auto& [p, a] : copy.a_params) a = a.clone();
    copy.classifier.w = copy.classifier.w.clone();
    copy.classifier.b = copy.classifier.b.clone();
    return copy;
  }
};

// Builds the student DAG over a trained backbone: window-k proxies, gate
// scalars (+2 on the pre-trained path, -2 on proxies), a fresh classifier for
// the target class count, and the backbone frozen.
template <typename S>
StudentGraph<S> attach_proxies(std::shared_ptr<Backbone<S>> backbone, int k,
                               std::int64_t num_classes, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("attach_proxies: skip window must be >= 1");
  StudentGraph<S> g;
  g.backbone = backbone;
  const auto& plan = backbone->plan;
  const int L = static_cast<int>(plan.depth());
  g.k = std::min<int>(k, L);  // k >= L is dense; the window formula saturates
  g.num_classes = num_classes;
  Rng root(seed);
  for (PathId p : all_paths(L, g.k)) {
    g.alive.insert(p);
    Tensor<S> a = Tensor<S>::scalar(p.pretrained() ? S(2) : S(-2));
    a.set_requires_grad(true);
    g.a_params.emplace(p, a);
    if (!p.pretrained()) {
      g.proxies.emplace(
          p, ProxyLayer<S>::make(plan.node_channels(p.src), plan.node_channels(p.dst),
                                 plan.node_spatial(p.src), plan.node_spatial(p.dst),
                                 root.split("proxy." + path_name(p))));
    }
  }
  g.classifier = LinearLayer<S>::make(plan.node_channels(L), num_classes,
                                      root.split("classifier"));
  backbone->set_trainable(false);
  return g;
}

}  // namespace nettrim
