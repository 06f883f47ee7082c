#pragma once

#include "nettrim/tensor.hpp"

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace nettrim {

// Reverse-mode tape.  Ops append nodes in execution order while a graph is
// active (RAII scope); backward() walks the list in reverse.  Gradients
// accumulate into the shared TensorStorage of each recorded tensor, so
// parameters keep their grads after the tape itself is gone.
template <typename S>
class ComputeGraph {
 public:
  struct Node {
    std::string op;
    std::vector<std::shared_ptr<TensorStorage<S>>> inputs;
    std::shared_ptr<TensorStorage<S>> output;
    // Pulls grad from output storage, pushes into input storages.
    std::function<void()> backward;
  };

  ComputeGraph() {
    if (active_) throw std::runtime_error("autograd: a graph is already active on this thread");
    active_ = this;
  }
  ~ComputeGraph() { active_ = nullptr; }
  ComputeGraph(const ComputeGraph&) = delete;
  ComputeGraph& operator=(const ComputeGraph&) = delete;

  static ComputeGraph* current() { return active_; }
  static bool recording() { return active_ != nullptr && !active_->paused_; }

  void record(Node n) { nodes_.push_back(std::move(n)); }
  std::size_t size() const { return nodes_.size(); }

  // Seed d(loss)/d(loss) = 1 on a scalar loss and run the chain rule.
  void backward(Tensor<S> loss) {
    if (loss.numel() != 1) {
      throw std::runtime_error("autograd: backward requires a scalar loss, got shape " +
                               shape_str(loss.shape()));
    }
    if (ran_backward_) {
      throw std::runtime_error("autograd: backward already ran on this graph");
    }
    ran_backward_ = true;
    loss.ensure_grad();
    loss.grad_data()[0] = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->backward) it->backward();
    }
  }

  // Temporarily stop recording (e.g. teacher forward passes inside a student
  // training step).
  class PauseGuard {
   public:
    PauseGuard() {
      g_ = active_;
      if (g_) {
        prev_ = g_->paused_;
        g_->paused_ = true;
      }
    }
    ~PauseGuard() {
      if (g_) g_->paused_ = prev_;
    }
    PauseGuard(const PauseGuard&) = delete;
    PauseGuard& operator=(const PauseGuard&) = delete;

   private:
    ComputeGraph* g_ = nullptr;
    bool prev_ = false;
  };

 private:
  std::vector<Node> nodes_;
  bool paused_ = false;
  bool ran_backward_ = false;
  static thread_local ComputeGraph* active_;
};

template <typename S>
thread_local ComputeGraph<S>* ComputeGraph<S>::active_ = nullptr;

template <typename S>
using PauseGuard = typename ComputeGraph<S>::PauseGuard;

// Helper used by every op: should this call be recorded?
template <typename S>
bool tracing_any(std::initializer_list<Tensor<S>> inputs) {
  if (!ComputeGraph<S>::recording()) return false;
  for (const auto& t : inputs) {
    if (t.requires_grad() || t.has_grad()) return true;
  }
  return false;
}

}  // namespace nettrim
