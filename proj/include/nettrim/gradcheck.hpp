#pragma once

#include "nettrim/autograd.hpp"
#include "nettrim/tensor.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nettrim {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::int64_t entries_checked = 0;
  bool deterministic = false;
  std::string worst;  // "param#/entry analytic=… numeric=…" for diagnostics
};

// Compare tape gradients of a scalar-valued forward() against central finite
// differences on every (or a strided subset of) parameter entry.
//
// forward() must recompute the loss from the current parameter values.  The
// error metric is |a-n| / max(|a|,|n|,1e-3), a relative error with an
// absolute floor.  Use double tensors: fp32 cancellation swamps the signal at
// usable step sizes.
template <typename S, typename F>
GradCheckReport grad_check(F&& forward, std::vector<Tensor<S>> params, double eps = 1e-5,
                           std::int64_t max_entries_per_param = 0) {
  static_assert(std::is_same_v<S, double>,
                "grad_check is only meaningful with double precision tensors");
  GradCheckReport rep;

  // Determinism guard: two untraced evaluations must agree bit for bit.
  const S v0 = forward().item();
  const S v1 = forward().item();
  rep.deterministic = std::memcmp(&v0, &v1, sizeof(S)) == 0;
  if (!rep.deterministic) {
    throw std::runtime_error("grad_check: forward() is not deterministic (" +
                             std::to_string(v0) + " vs " + std::to_string(v1) + ")");
  }

  for (auto& p : params) {
    p.ensure_grad();
    p.zero_grad();
  }
  std::vector<std::vector<S>> analytic;
  {
    ComputeGraph<S> g;
    auto loss = forward();
    g.backward(loss);
  }
  for (auto& p : params) analytic.push_back(std::vector<S>(p.grad_data(), p.grad_data() + p.numel()));

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const std::int64_t n = p.numel();
    std::int64_t stride = 1;
    if (max_entries_per_param > 0 && n > max_entries_per_param) {
      stride = (n + max_entries_per_param - 1) / max_entries_per_param;
    }
    for (std::int64_t i = 0; i < n; i += stride) {
      const S saved = p.data()[i];
      p.data()[i] = saved + static_cast<S>(eps);
      const double fp = static_cast<double>(forward().item());
      p.data()[i] = saved - static_cast<S>(eps);
      const double fm = static_cast<double>(forward().item());
      p.data()[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = static_cast<double>(analytic[pi][static_cast<std::size_t>(i)]);
      // The floor keeps finite-difference roundoff on near-zero entries from
      // drowning the signal; real defects are systematic and show up on
      // entries of ordinary magnitude.
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3});
      ++rep.entries_checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = "param " + std::to_string(pi) + " entry " + std::to_string(i) +
                    " analytic=" + std::to_string(a) + " numeric=" + std::to_string(numeric);
      }
    }
  }
  return rep;
}

}  // namespace nettrim
