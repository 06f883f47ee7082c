#pragma once

#include "nettrim/arch.hpp"
#include "nettrim/nn.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace nettrim {

// The pre-trained network: stem conv -> L residual blocks -> global-avg-pool
// + linear head.  Node 0 is the stem output; node l is block l's output.
template <typename S>
struct Backbone {
  BackbonePlan plan;
  Conv2dLayer<S> stem_conv;
  BatchNorm2dLayer<S> stem_bn;
  std::vector<ResidualBlockLayer<S>> blocks;  // blocks[l-1] is G_l
  LinearLayer<S> head;

  std::int64_t depth() const { return plan.depth(); }

  Tensor<S> stem_forward(const Tensor<S>& x, bool training) {
    return relu(stem_bn.forward(stem_conv.forward(x), training));
  }

  Tensor<S> block_forward(std::int64_t l, const Tensor<S>& x, bool training) {
    if (l < 1 || l > depth()) {
      throw std::out_of_range("backbone: block " + std::to_string(l) + " out of range");
    }
    return blocks[static_cast<std::size_t>(l - 1)].forward(x, training);
  }

  Tensor<S> head_forward(const Tensor<S>& x_last) {
    return head.forward(global_avg_pool(x_last));
  }

  // Activations at every node 0..L.
  std::vector<Tensor<S>> node_activations(const Tensor<S>& x, bool training) {
    std::vector<Tensor<S>> nodes;
    nodes.reserve(static_cast<std::size_t>(depth() + 1));
    nodes.push_back(stem_forward(x, training));
    for (std::int64_t l = 1; l <= depth(); ++l) {
      nodes.push_back(block_forward(l, nodes.back(), training));
    }
    return nodes;
  }

  Tensor<S> forward(const Tensor<S>& x, bool training) {
    Tensor<S> h = stem_forward(x, training);
    for (std::int64_t l = 1; l <= depth(); ++l) h = block_forward(l, h, training);
    return head_forward(h);
  }

  void params(std::vector<Tensor<S>>& out) {
    stem_conv.params(out);
    stem_bn.params(out);
    for (auto& blk : blocks) blk.params(out);
    head.params(out);
  }
  std::vector<Tensor<S>> params() {
    std::vector<Tensor<S>> out;
    params(out);
    return out;
  }

  NamedTensors<S> state() const {
    NamedTensors<S> out;
    stem_conv.state(out, "stem.conv");
    stem_bn.state(out, "stem.bn");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].state(out, "block" + std::to_string(i + 1));
    }
    head.state(out, "head");
    return out;
  }

  std::uint64_t digest() const { return state_digest(state()); }

  void set_trainable(bool trainable) {
    auto ps = params();
    for (auto& p : ps) p.set_requires_grad(trainable);
  }

  Backbone clone() const {
    Backbone copy = *this;  // copies layer structs, but tensors still alias
    copy.stem_conv.w = copy.stem_conv.w.clone();
    if (copy.stem_conv.has_bias) copy.stem_conv.b = copy.stem_conv.b.clone();
    clone_bn(copy.stem_bn);
    for (auto& blk : copy.blocks) {
      blk.conv1.w = blk.conv1.w.clone();
      blk.conv2.w = blk.conv2.w.clone();
      clone_bn(blk.bn1);
      clone_bn(blk.bn2);
      if (blk.projects) {
        blk.proj.w = blk.proj.w.clone();
        clone_bn(blk.bnp);
      }
    }
    copy.head.w = copy.head.w.clone();
    copy.head.b = copy.head.b.clone();
    return copy;
  }

 private:
  static void clone_bn(BatchNorm2dLayer<S>& bn) {
    bn.gamma = bn.gamma.clone();
    bn.beta = bn.beta.clone();
    bn.running_mean = bn.running_mean.clone();
    bn.running_var = bn.running_var.clone();
  }
};

// Deterministic He-initialized backbone from the plan and a seed.
template <typename S>
Backbone<S> build_backbone(const BackbonePlan& plan, std::uint64_t seed) {
  plan.validate();
  Backbone<S> net;
  net.plan = plan;
  Rng root(seed);
  net.stem_conv = Conv2dLayer<S>::make(plan.input_channels, plan.channels.front(), 3, 1, 1,
                                       false, root.split("stem"));
  net.stem_bn = BatchNorm2dLayer<S>::make(plan.channels.front());
  for (std::int64_t l = 1; l <= plan.depth(); ++l) {
    net.blocks.push_back(ResidualBlockLayer<S>::make(
        plan.node_channels(l - 1), plan.node_channels(l), plan.block_stride(l),
        root.split("block" + std::to_string(l))));
  }
  net.head = LinearLayer<S>::make(plan.node_channels(plan.depth()), plan.num_classes,
                                  root.split("head"));
  return net;
}

// Swaps in a fresh classifier head sized for a new task; every other weight is
// kept.  Transferring to a task with a different label set starts from an
// untrained head, so the head seed must be deterministic for reproducibility.
template <typename S>
void rehead(Backbone<S>& net, std::int64_t num_classes, Rng rng) {
  net.plan.num_classes = num_classes;
  net.head =
      LinearLayer<S>::make(net.plan.node_channels(net.plan.depth()), num_classes, rng);
}

}  // namespace nettrim
