#pragma once

#include "nettrim/autograd.hpp"
#include "nettrim/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace nettrim {

// An input receives gradient if it is a trainable leaf or was itself produced
// by a recorded op (which allocates its grad buffer at record time).
template <typename S>
bool wants_grad(const std::shared_ptr<TensorStorage<S>>& st) {
  return st->requires_grad || !st->grad.empty();
}

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "add");
  Tensor<S> y(a.shape());
  y.array() = a.array() + b.array();
  if (tracing_any<S>({a, b})) {
    y.ensure_grad();
    auto as = a.storage(), bs = b.storage(), ys = y.storage();
    ComputeGraph<S>::current()->record({"add", {as, bs}, ys, [as, bs, ys] {
      const auto n = ys->numel();
      if (wants_grad(as)) {
        as->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) as->grad[i] += ys->grad[i];
      }
      if (wants_grad(bs)) {
        bs->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) bs->grad[i] += ys->grad[i];
      }
    }});
  }
  return y;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "sub");
  Tensor<S> y(a.shape());
  y.array() = a.array() - b.array();
  if (tracing_any<S>({a, b})) {
    y.ensure_grad();
    auto as = a.storage(), bs = b.storage(), ys = y.storage();
    ComputeGraph<S>::current()->record({"sub", {as, bs}, ys, [as, bs, ys] {
      const auto n = ys->numel();
      if (wants_grad(as)) {
        as->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) as->grad[i] += ys->grad[i];
      }
      if (wants_grad(bs)) {
        bs->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) bs->grad[i] -= ys->grad[i];
      }
    }});
  }
  return y;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "mul");
  Tensor<S> y(a.shape());
  y.array() = a.array() * b.array();
  if (tracing_any<S>({a, b})) {
    y.ensure_grad();
    auto as = a.storage(), bs = b.storage(), ys = y.storage();
    ComputeGraph<S>::current()->record({"mul", {as, bs}, ys, [as, bs, ys] {
      const auto n = ys->numel();
      if (wants_grad(as)) {
        as->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) as->grad[i] += ys->grad[i] * bs->data[i];
      }
      if (wants_grad(bs)) {
        bs->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) bs->grad[i] += ys->grad[i] * as->data[i];
      }
    }});
  }
  return y;
}

// y = x * s where s is a single-element tensor (gradient flows to both).
template <typename S>
Tensor<S> scale(const Tensor<S>& x, const Tensor<S>& s) {
  if (s.numel() != 1) {
    throw std::invalid_argument("scale: scale factor must be a single element, got " +
                                shape_str(s.shape()));
  }
  Tensor<S> y(x.shape());
  const S sv = s.data()[0];
  y.array() = x.array() * sv;
  if (tracing_any<S>({x, s})) {
    y.ensure_grad();
    auto xs = x.storage(), ss = s.storage(), ys = y.storage();
    ComputeGraph<S>::current()->record({"scale", {xs, ss}, ys, [xs, ss, ys] {
      const auto n = ys->numel();
      const S sv2 = ss->data[0];
      if (wants_grad(xs)) {
        xs->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) xs->grad[i] += ys->grad[i] * sv2;
      }
      if (wants_grad(ss)) {
        ss->ensure_grad();
        S acc = S(0);
        for (std::int64_t i = 0; i < n; ++i) acc += ys->grad[i] * xs->data[i];
        ss->grad[0] += acc;
      }
    }});
  }
  return y;
}

// y = c * x for a plain constant c (no gradient into c).
template <typename S>
Tensor<S> scale_const(const Tensor<S>& x, double c) {
  Tensor<S> y(x.shape());
  y.array() = x.array() * static_cast<S>(c);
  if (tracing_any<S>({x})) {
    y.ensure_grad();
    auto xs = x.storage(), ys = y.storage();
    const S sv = static_cast<S>(c);
    ComputeGraph<S>::current()->record({"scale_const", {xs}, ys, [xs, ys, sv] {
      if (!wants_grad(xs)) return;
      xs->ensure_grad();
      const auto n = ys->numel();
      for (std::int64_t i = 0; i < n; ++i) xs->grad[i] += ys->grad[i] * sv;
    }});
  }
  return y;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  Tensor<S> y(x.shape());
  y.array() = x.array().max(S(0));
  if (tracing_any<S>({x})) {
    y.ensure_grad();
    auto xs = x.storage(), ys = y.storage();
    ComputeGraph<S>::current()->record({"relu", {xs}, ys, [xs, ys] {
      if (!wants_grad(xs)) return;
      xs->ensure_grad();
      const auto n = ys->numel();
      for (std::int64_t i = 0; i < n; ++i) {
        if (xs->data[i] > S(0)) xs->grad[i] += ys->grad[i];
      }
    }});
  }
  return y;
}

// ---------------------------------------------------------------------------
// Reductions and scalar plumbing
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  Tensor<S> y = Tensor<S>::scalar(static_cast<S>(x.array().template cast<double>().sum()));
  if (tracing_any<S>({x})) {
    y.ensure_grad();
    auto xs = x.storage(), ys = y.storage();
    ComputeGraph<S>::current()->record({"sum", {xs}, ys, [xs, ys] {
      if (!wants_grad(xs)) return;
      xs->ensure_grad();
      const S g = ys->grad[0];
      const auto n = xs->numel();
      for (std::int64_t i = 0; i < n; ++i) xs->grad[i] += g;
    }});
  }
  return y;
}

// Sum of squared entries; the workhorse for distillation penalties.
template <typename S>
Tensor<S> sum_of_squares(const Tensor<S>& x) {
  double acc = x.array().template cast<double>().square().sum();
  Tensor<S> y = Tensor<S>::scalar(static_cast<S>(acc));
  if (tracing_any<S>({x})) {
    y.ensure_grad();
    auto xs = x.storage(), ys = y.storage();
    ComputeGraph<S>::current()->record({"sum_of_squares", {xs}, ys, [xs, ys] {
      if (!wants_grad(xs)) return;
      xs->ensure_grad();
      const S g = ys->grad[0];
      const auto n = xs->numel();
      for (std::int64_t i = 0; i < n; ++i) xs->grad[i] += S(2) * xs->data[i] * g;
    }});
  }
  return y;
}

// Product of a 1-d tensor's entries.  Backward uses prefix/suffix products so
// exact zeros are handled without division.
template <typename S>
Tensor<S> prod(const Tensor<S>& x) {
  if (x.rank() != 1) {
    throw std::invalid_argument("prod: expects a 1-d tensor, got " + shape_str(x.shape()));
  }
  const auto n = x.numel();
  S p = S(1);
  for (std::int64_t i = 0; i < n; ++i) p *= x.data()[i];
  Tensor<S> y = Tensor<S>::scalar(p);
  if (tracing_any<S>({x})) {
    y.ensure_grad();
    auto xs = x.storage(), ys = y.storage();
    ComputeGraph<S>::current()->record({"prod", {xs}, ys, [xs, ys] {
      if (!wants_grad(xs)) return;
      xs->ensure_grad();
      const auto m = xs->numel();
      std::vector<S> pre(m + 1, S(1)), suf(m + 1, S(1));
      for (std::int64_t i = 0; i < m; ++i) pre[i + 1] = pre[i] * xs->data[i];
      for (std::int64_t i = m - 1; i >= 0; --i) suf[i] = suf[i + 1] * xs->data[i];
      const S g = ys->grad[0];
      for (std::int64_t i = 0; i < m; ++i) xs->grad[i] += g * pre[i] * suf[i + 1];
    }});
  }
  return y;
}

// Single entry of a 1-d tensor as a scalar tensor.
template <typename S>
Tensor<S> pick(const Tensor<S>& x, std::int64_t index) {
  if (x.rank() != 1 || index < 0 || index >= x.numel()) {
    throw std::invalid_argument("pick: index " + std::to_string(index) +
                                " out of range for " + shape_str(x.shape()));
  }
  Tensor<S> y = Tensor<S>::scalar(x.data()[index]);
  if (tracing_any<S>({x})) {
    y.ensure_grad();
    auto xs = x.storage(), ys = y.storage();
    ComputeGraph<S>::current()->record({"pick", {xs}, ys, [xs, ys, index] {
      if (!wants_grad(xs)) return;
      xs->ensure_grad();
      xs->grad[index] += ys->grad[0];
    }});
  }
  return y;
}

// Concatenate single-element tensors into a 1-d tensor.
template <typename S>
Tensor<S> concat_scalars(const std::vector<Tensor<S>>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_scalars: empty input list");
  Tensor<S> y(Shape{static_cast<std::int64_t>(xs.size())});
  bool trace = ComputeGraph<S>::recording();
  bool any = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].numel() != 1) {
      throw std::invalid_argument("concat_scalars: input " + std::to_string(i) +
                                  " is not a single element");
    }
    y.data()[i] = xs[i].data()[0];
    any = any || xs[i].requires_grad() || xs[i].has_grad();
  }
  if (trace && any) {
    y.ensure_grad();
    std::vector<std::shared_ptr<TensorStorage<S>>> ins;
    ins.reserve(xs.size());
    for (const auto& t : xs) ins.push_back(t.storage());
    auto ys = y.storage();
    ComputeGraph<S>::current()->record({"concat_scalars", ins, ys, [ins, ys] {
      for (std::size_t i = 0; i < ins.size(); ++i) {
        if (!wants_grad(ins[i])) continue;
        ins[i]->ensure_grad();
        ins[i]->grad[0] += ys->grad[i];
      }
    }});
  }
  return y;
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " -> " +
                                shape_str(new_shape) + " changes element count");
  }
  Tensor<S> y = Tensor<S>::from_vector(std::move(new_shape),
                                       std::vector<S>(x.data(), x.data() + x.numel()));
  if (tracing_any<S>({x})) {
    y.ensure_grad();
    auto xs = x.storage(), ys = y.storage();
    ComputeGraph<S>::current()->record({"reshape", {xs}, ys, [xs, ys] {
      if (!wants_grad(xs)) return;
      xs->ensure_grad();
      const auto n = xs->numel();
      for (std::int64_t i = 0; i < n; ++i) xs->grad[i] += ys->grad[i];
    }});
  }
  return y;
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

// Softmax over the last axis of a 1-d tensor (max-subtracted for stability).
template <typename S>
Tensor<S> softmax(const Tensor<S>& x) {
  if (x.rank() != 1) {
    throw std::invalid_argument("softmax: expects a 1-d tensor, got " + shape_str(x.shape()));
  }
  const auto n = x.numel();
  Tensor<S> y(x.shape());
  S mx = x.data()[0];
  for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, x.data()[i]);
  double denom = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double e = std::exp(static_cast<double>(x.data()[i] - mx));
    y.data()[i] = static_cast<S>(e);
    denom += e;
  }
  for (std::int64_t i = 0; i < n; ++i) y.data()[i] = static_cast<S>(y.data()[i] / denom);
  if (tracing_any<S>({x})) {
    y.ensure_grad();
    auto xs = x.storage(), ys = y.storage();
    ComputeGraph<S>::current()->record({"softmax", {xs}, ys, [xs, ys] {
      if (!wants_grad(xs)) return;
      xs->ensure_grad();
      const auto m = xs->numel();
      S dot = S(0);
      for (std::int64_t i = 0; i < m; ++i) dot += ys->grad[i] * ys->data[i];
      for (std::int64_t i = 0; i < m; ++i) {
        xs->grad[i] += ys->data[i] * (ys->grad[i] - dot);
      }
    }});
  }
  return y;
}

// Row-wise log-softmax for [N, K] logits.
template <typename S>
Tensor<S> log_softmax(const Tensor<S>& x) {
  if (x.rank() != 2) {
    throw std::invalid_argument("log_softmax: expects [N,K], got " + shape_str(x.shape()));
  }
  const auto n = x.dim(0), k = x.dim(1);
  Tensor<S> y(x.shape());
  for (std::int64_t r = 0; r < n; ++r) {
    const S* xr = x.data() + r * k;
    S* yr = y.data() + r * k;
    S mx = xr[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, xr[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(xr[j] - mx));
    const S lse = mx + static_cast<S>(std::log(denom));
    for (std::int64_t j = 0; j < k; ++j) yr[j] = xr[j] - lse;
  }
  if (tracing_any<S>({x})) {
    y.ensure_grad();
    auto xs = x.storage(), ys = y.storage();
    ComputeGraph<S>::current()->record({"log_softmax", {xs}, ys, [xs, ys, n, k] {
      if (!wants_grad(xs)) return;
      xs->ensure_grad();
      for (std::int64_t r = 0; r < n; ++r) {
        const S* yr = ys->data.data() + r * k;
        const S* gr = ys->grad.data() + r * k;
        S* dx = xs->grad.data() + r * k;
        S gsum = S(0);
        for (std::int64_t j = 0; j < k; ++j) gsum += gr[j];
        for (std::int64_t j = 0; j < k; ++j) {
          dx[j] += gr[j] - std::exp(static_cast<double>(yr[j])) * gsum;
        }
      }
    }});
  }
  return y;
}

// Mean negative log-likelihood of integer labels under [N, K] logits.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<std::int64_t>& labels) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("cross_entropy: expects [N,K] logits, got " +
                                shape_str(logits.shape()));
  }
  const auto n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(n) + " rows");
  }
  for (auto l : labels) {
    if (l < 0 || l >= k) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(l) +
                                  " out of range [0," + std::to_string(k) + ")");
    }
  }
  // Forward through a non-recorded log-softmax; record one fused node.
  std::vector<S> ls(static_cast<std::size_t>(n * k));
  double loss = 0.0;
  for (std::int64_t r = 0; r < n; ++r) {
    const S* xr = logits.data() + r * k;
    S mx = xr[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, xr[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(xr[j] - mx));
    const double lse = mx + std::log(denom);
    for (std::int64_t j = 0; j < k; ++j) {
      ls[static_cast<std::size_t>(r * k + j)] = static_cast<S>(xr[j] - lse);
    }
    loss -= static_cast<double>(xr[labels[static_cast<std::size_t>(r)]]) - lse;
  }
  Tensor<S> y = Tensor<S>::scalar(static_cast<S>(loss / static_cast<double>(n)));
  if (tracing_any<S>({logits})) {
    y.ensure_grad();
    auto xs = logits.storage(), ys = y.storage();
    ComputeGraph<S>::current()->record(
        {"cross_entropy", {xs}, ys, [xs, ys, ls = std::move(ls), labels, n, k] {
          if (!wants_grad(xs)) return;
          xs->ensure_grad();
          const S g = ys->grad[0] / static_cast<S>(n);
          for (std::int64_t r = 0; r < n; ++r) {
            S* dx = xs->grad.data() + r * k;
            const S* lr = ls.data() + r * k;
            for (std::int64_t j = 0; j < k; ++j) {
              S p = static_cast<S>(std::exp(static_cast<double>(lr[j])));
              dx[j] += g * (p - (labels[static_cast<std::size_t>(r)] == j ? S(1) : S(0)));
            }
          }
        }});
  }
  return y;
}

// ---------------------------------------------------------------------------
// Dense / convolution
// ---------------------------------------------------------------------------

// y[N,Co] = x[N,Ci] * W[Co,Ci]^T + b[Co]
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1) {
    throw std::invalid_argument("linear: expects x[N,Ci], w[Co,Ci], b[Co]");
  }
  const auto n = x.dim(0), ci = x.dim(1), co = w.dim(0);
  if (w.dim(1) != ci || b.dim(0) != co) {
    throw std::invalid_argument("linear: incompatible shapes x" + shape_str(x.shape()) +
                                " w" + shape_str(w.shape()) + " b" + shape_str(b.shape()));
  }
  Tensor<S> y(Shape{n, co});
  auto xm = x.matrix(n, ci);
  auto wm = w.matrix(co, ci);
  auto ym = y.matrix(n, co);
  ym.noalias() = xm * wm.transpose();
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t j = 0; j < co; ++j) y.data()[r * co + j] += b.data()[j];
  }
  if (tracing_any<S>({x, w, b})) {
    y.ensure_grad();
    auto xs = x.storage(), ws = w.storage(), bs = b.storage(), ys = y.storage();
    ComputeGraph<S>::current()->record({"linear", {xs, ws, bs}, ys, [xs, ws, bs, ys, n, ci, co] {
      using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
      Eigen::Map<const Mat> g(ys->grad.data(), n, co);
      Eigen::Map<const Mat> xm2(xs->data.data(), n, ci);
      Eigen::Map<const Mat> wm2(ws->data.data(), co, ci);
      if (wants_grad(xs)) {
        xs->ensure_grad();
        Eigen::Map<Mat> dx(xs->grad.data(), n, ci);
        dx.noalias() += g * wm2;
      }
      if (wants_grad(ws)) {
        ws->ensure_grad();
        Eigen::Map<Mat> dw(ws->grad.data(), co, ci);
        dw.noalias() += g.transpose() * xm2;
      }
      if (wants_grad(bs)) {
        bs->ensure_grad();
        for (std::int64_t r = 0; r < n; ++r) {
          for (std::int64_t j = 0; j < co; ++j) bs->grad[j] += ys->grad[r * co + j];
        }
      }
    }});
  }
  return y;
}

struct Conv2dSpec {
  std::int64_t stride = 1;
  std::int64_t pad = 0;
};

inline std::int64_t conv_out_size(std::int64_t in, std::int64_t k, std::int64_t stride,
                                  std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

// Fill one sample's [Ci*kh*kw, Ho*Wo] block of a row-major column matrix whose
// rows have length ld (>= Ho*Wo); zero padding outside the image.
template <typename S>
void im2col(const S* x, std::int64_t ci, std::int64_t h, std::int64_t w, std::int64_t kh,
            std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t ho,
            std::int64_t wo, S* col, std::int64_t ld) {
  for (std::int64_t c = 0; c < ci; ++c) {
    for (std::int64_t ki = 0; ki < kh; ++ki) {
      for (std::int64_t kj = 0; kj < kw; ++kj) {
        S* row = col + ((c * kh + ki) * kw + kj) * ld;
        for (std::int64_t oi = 0; oi < ho; ++oi) {
          const std::int64_t ii = oi * stride - pad + ki;
          if (ii < 0 || ii >= h) {
            std::fill(row + oi * wo, row + (oi + 1) * wo, S(0));
            continue;
          }
          const S* xrow = x + (c * h + ii) * w;
          for (std::int64_t oj = 0; oj < wo; ++oj) {
            const std::int64_t jj = oj * stride - pad + kj;
            row[oi * wo + oj] = (jj < 0 || jj >= w) ? S(0) : xrow[jj];
          }
        }
      }
    }
  }
}

// Scatter-add one sample's column-gradient block (rows of length ld) into dx.
template <typename S>
void col2im(const S* col, std::int64_t ld, std::int64_t ci, std::int64_t h, std::int64_t w,
            std::int64_t kh, std::int64_t kw, std::int64_t stride, std::int64_t pad,
            std::int64_t ho, std::int64_t wo, S* dx) {
  for (std::int64_t c = 0; c < ci; ++c) {
    for (std::int64_t ki = 0; ki < kh; ++ki) {
      for (std::int64_t kj = 0; kj < kw; ++kj) {
        const S* row = col + ((c * kh + ki) * kw + kj) * ld;
        for (std::int64_t oi = 0; oi < ho; ++oi) {
          const std::int64_t ii = oi * stride - pad + ki;
          if (ii < 0 || ii >= h) continue;
          S* xrow = dx + (c * h + ii) * w;
          for (std::int64_t oj = 0; oj < wo; ++oj) {
            const std::int64_t jj = oj * stride - pad + kj;
            if (jj >= 0 && jj < w) xrow[jj] += row[oi * wo + oj];
          }
        }
      }
    }
  }
}

}  // namespace detail

// y[N,Co,Ho,Wo] = conv(x[N,Ci,H,W], w[Co,Ci,kh,kw]) + b[Co].
// Batched im2col: one [Co, Ci*kh*kw] x [Ci*kh*kw, N*Ho*Wo] GEMM per call,
// then a per-sample scatter into the output layout.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                 Conv2dSpec spec = {}) {
  if (x.rank() != 4 || w.rank() != 4 || b.rank() != 1) {
    throw std::invalid_argument("conv2d: expects x[N,Ci,H,W], w[Co,Ci,kh,kw], b[Co]");
  }
  const auto n = x.dim(0), ci = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const auto co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != ci || b.dim(0) != co) {
    throw std::invalid_argument("conv2d: incompatible shapes x" + shape_str(x.shape()) +
                                " w" + shape_str(w.shape()));
  }
  const auto ho = conv_out_size(h, kh, spec.stride, spec.pad);
  const auto wo = conv_out_size(ww, kw, spec.stride, spec.pad);
  if (ho <= 0 || wo <= 0) {
    throw std::invalid_argument("conv2d: output would be empty for input " +
                                shape_str(x.shape()));
  }
  Tensor<S> y(Shape{n, co, ho, wo});
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const std::int64_t crows = ci * kh * kw, ccols = ho * wo;
  Mat col(crows, n * ccols);
  for (std::int64_t s = 0; s < n; ++s) {
    detail::im2col(x.data() + s * ci * h * ww, ci, h, ww, kh, kw, spec.stride, spec.pad, ho,
                   wo, col.data() + s * ccols, n * ccols);
  }
  Eigen::Map<const Mat> wm(w.data(), co, crows);
  Mat out(co, n * ccols);
  out.noalias() = wm * col;
  for (std::int64_t s = 0; s < n; ++s) {
    Eigen::Map<Mat> ym(y.data() + s * co * ccols, co, ccols);
    ym = out.block(0, s * ccols, co, ccols);
    for (std::int64_t c = 0; c < co; ++c) ym.row(c).array() += b.data()[c];
  }
  if (tracing_any<S>({x, w, b})) {
    y.ensure_grad();
    auto xs = x.storage(), ws = w.storage(), bs = b.storage(), ys = y.storage();
    const auto stride = spec.stride, pad = spec.pad;
    ComputeGraph<S>::current()->record(
        {"conv2d", {xs, ws, bs}, ys,
         [xs, ws, bs, ys, n, ci, h, ww, co, kh, kw, ho, wo, stride, pad] {
           const std::int64_t crows2 = ci * kh * kw, ccols2 = ho * wo;
           const bool gx = wants_grad(xs), gw = wants_grad(ws), gb = wants_grad(bs);
           if (!gx && !gw && !gb) return;
           if (gx) xs->ensure_grad();
           if (gw) ws->ensure_grad();
           if (gb) bs->ensure_grad();
           // Gather output grads into [co, n*ccols] to mirror the forward GEMM.
           Mat g(co, n * ccols2);
           for (std::int64_t s = 0; s < n; ++s) {
             Eigen::Map<const Mat> gs(ys->grad.data() + s * co * ccols2, co, ccols2);
             g.block(0, s * ccols2, co, ccols2) = gs;
           }
           if (gw) {
             Mat col2(crows2, n * ccols2);
             for (std::int64_t s = 0; s < n; ++s) {
               detail::im2col(xs->data.data() + s * ci * h * ww, ci, h, ww, kh, kw, stride,
                              pad, ho, wo, col2.data() + s * ccols2, n * ccols2);
             }
             Eigen::Map<Mat> dw(ws->grad.data(), co, crows2);
             dw.noalias() += g * col2.transpose();
           }
           if (gx) {
             Eigen::Map<const Mat> wm2(ws->data.data(), co, crows2);
             Mat dcol(crows2, n * ccols2);
             dcol.noalias() = wm2.transpose() * g;
             for (std::int64_t s = 0; s < n; ++s) {
               detail::col2im(dcol.data() + s * ccols2, n * ccols2, ci, h, ww, kh, kw, stride,
                              pad, ho, wo, xs->grad.data() + s * ci * h * ww);
             }
           }
           if (gb) {
             for (std::int64_t c = 0; c < co; ++c) bs->grad[c] += g.row(c).sum();
           }
         }});
  }
  return y;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

struct Pool2dSpec {
  std::int64_t kernel = 2;
  std::int64_t stride = 2;
  // Ceil-mode lets the last window hang off the edge (clipped to valid
  // elements), so non-integral size ratios still land on the target size.
  bool ceil_mode = false;
};

inline std::int64_t pool_out_size(std::int64_t in, const Pool2dSpec& p) {
  if (p.ceil_mode) {
    return (in - p.kernel + p.stride - 1) / p.stride + 1;
  }
  return (in - p.kernel) / p.stride + 1;
}

template <typename S>
Tensor<S> maxpool2d(const Tensor<S>& x, Pool2dSpec spec) {
  if (x.rank() != 4) {
    throw std::invalid_argument("maxpool2d: expects [N,C,H,W], got " + shape_str(x.shape()));
  }
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto ho = pool_out_size(h, spec), wo = pool_out_size(w, spec);
  if (ho <= 0 || wo <= 0) {
    throw std::invalid_argument("maxpool2d: output would be empty for input " +
                                shape_str(x.shape()));
  }
  Tensor<S> y(Shape{n, c, ho, wo});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(y.numel()));
  std::int64_t oidx = 0;
  for (std::int64_t s = 0; s < n; ++s) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const S* plane = x.data() + (s * c + ch) * h * w;
      const std::int64_t base = (s * c + ch) * h * w;
      for (std::int64_t oi = 0; oi < ho; ++oi) {
        const std::int64_t i0 = oi * spec.stride;
        const std::int64_t i1 = std::min(i0 + spec.kernel, h);
        for (std::int64_t oj = 0; oj < wo; ++oj) {
          const std::int64_t j0 = oj * spec.stride;
          const std::int64_t j1 = std::min(j0 + spec.kernel, w);
          S best = -std::numeric_limits<S>::infinity();
          std::int64_t bi = -1;
          for (std::int64_t ii = i0; ii < i1; ++ii) {
            for (std::int64_t jj = j0; jj < j1; ++jj) {
              const S v = plane[ii * w + jj];
              if (v > best) {  // first occurrence wins ties
                best = v;
                bi = base + ii * w + jj;
              }
            }
          }
          y.data()[oidx] = best;
          argmax[static_cast<std::size_t>(oidx)] = bi;
          ++oidx;
        }
      }
    }
  }
  if (tracing_any<S>({x})) {
    y.ensure_grad();
    auto xs = x.storage(), ys = y.storage();
    ComputeGraph<S>::current()->record(
        {"maxpool2d", {xs}, ys, [xs, ys, argmax = std::move(argmax)] {
          if (!wants_grad(xs)) return;
          xs->ensure_grad();
          const auto m = ys->numel();
          for (std::int64_t i = 0; i < m; ++i) {
            xs->grad[argmax[static_cast<std::size_t>(i)]] += ys->grad[i];
          }
        }});
  }
  return y;
}

// [N,C,H,W] -> [N,C]: mean over the spatial plane.
template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  if (x.rank() != 4) {
    throw std::invalid_argument("global_avg_pool: expects [N,C,H,W], got " +
                                shape_str(x.shape()));
  }
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<S> y(Shape{n, c});
  for (std::int64_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    const S* p = x.data() + i * hw;
    for (std::int64_t j = 0; j < hw; ++j) acc += p[j];
    y.data()[i] = static_cast<S>(acc / static_cast<double>(hw));
  }
  if (tracing_any<S>({x})) {
    y.ensure_grad();
    auto xs = x.storage(), ys = y.storage();
    ComputeGraph<S>::current()->record({"global_avg_pool", {xs}, ys, [xs, ys, n, c, hw] {
      if (!wants_grad(xs)) return;
      xs->ensure_grad();
      const S inv = S(1) / static_cast<S>(hw);
      for (std::int64_t i = 0; i < n * c; ++i) {
        const S g = ys->grad[i] * inv;
        S* dp = xs->grad.data() + i * hw;
        for (std::int64_t j = 0; j < hw; ++j) dp[j] += g;
      }
    }});
  }
  return y;
}

// ---------------------------------------------------------------------------
// Batch normalization (2-d feature maps, per-channel)
// ---------------------------------------------------------------------------

struct BatchNormState {
  double momentum = 0.1;
  double eps = 1e-5;
};

// Train mode: normalize with biased batch stats, update running stats with the
// unbiased variance.  Eval mode: normalize with running stats.  Gradients flow
// to x/gamma/beta in both modes (frozen gamma/beta simply never ask for grad).
template <typename S>
Tensor<S> batchnorm2d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                      Tensor<S>& running_mean, Tensor<S>& running_var, bool training,
                      BatchNormState bn = {}) {
  if (x.rank() != 4) {
    throw std::invalid_argument("batchnorm2d: expects [N,C,H,W], got " + shape_str(x.shape()));
  }
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c ||
      running_var.numel() != c) {
    throw std::invalid_argument("batchnorm2d: parameter size mismatch for C=" +
                                std::to_string(c));
  }
  const std::int64_t m = n * h * w;
  const std::int64_t hw = h * w;
  std::vector<S> mean(static_cast<std::size_t>(c)), invstd(static_cast<std::size_t>(c));
  if (training) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::int64_t s = 0; s < n; ++s) {
        const S* p = x.data() + (s * c + ch) * hw;
        for (std::int64_t j = 0; j < hw; ++j) acc += p[j];
      }
      const double mu = acc / static_cast<double>(m);
      double vacc = 0.0;
      for (std::int64_t s = 0; s < n; ++s) {
        const S* p = x.data() + (s * c + ch) * hw;
        for (std::int64_t j = 0; j < hw; ++j) {
          const double d = p[j] - mu;
          vacc += d * d;
        }
      }
      const double var = vacc / static_cast<double>(m);
      mean[static_cast<std::size_t>(ch)] = static_cast<S>(mu);
      invstd[static_cast<std::size_t>(ch)] = static_cast<S>(1.0 / std::sqrt(var + bn.eps));
      const double unbiased = (m > 1) ? vacc / static_cast<double>(m - 1) : var;
      running_mean.data()[ch] =
          static_cast<S>((1.0 - bn.momentum) * running_mean.data()[ch] + bn.momentum * mu);
      running_var.data()[ch] =
          static_cast<S>((1.0 - bn.momentum) * running_var.data()[ch] + bn.momentum * unbiased);
    }
  } else {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mean[static_cast<std::size_t>(ch)] = running_mean.data()[ch];
      invstd[static_cast<std::size_t>(ch)] =
          static_cast<S>(1.0 / std::sqrt(static_cast<double>(running_var.data()[ch]) + bn.eps));
    }
  }
  Tensor<S> y(x.shape());
  for (std::int64_t s = 0; s < n; ++s) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const S mu = mean[static_cast<std::size_t>(ch)];
      const S is = invstd[static_cast<std::size_t>(ch)];
      const S g = gamma.data()[ch], bbias = beta.data()[ch];
      const S* p = x.data() + (s * c + ch) * hw;
      S* q = y.data() + (s * c + ch) * hw;
      for (std::int64_t j = 0; j < hw; ++j) q[j] = (p[j] - mu) * is * g + bbias;
    }
  }
  if (tracing_any<S>({x, gamma, beta})) {
    y.ensure_grad();
    auto xs = x.storage(), gs = gamma.storage(), bs = beta.storage(), ys = y.storage();
    ComputeGraph<S>::current()->record(
        {"batchnorm2d", {xs, gs, bs}, ys,
         [xs, gs, bs, ys, mean = std::move(mean), invstd = std::move(invstd), n, c, hw, m,
          training] {
           const bool gx = wants_grad(xs), gg = wants_grad(gs), gb = wants_grad(bs);
           if (!gx && !gg && !gb) return;
           if (gx) xs->ensure_grad();
           if (gg) gs->ensure_grad();
           if (gb) bs->ensure_grad();
           for (std::int64_t ch = 0; ch < c; ++ch) {
             const S mu = mean[static_cast<std::size_t>(ch)];
             const S is = invstd[static_cast<std::size_t>(ch)];
             const S gam = gs->data[ch];
             double sum_dy = 0.0, sum_dy_xhat = 0.0;
             for (std::int64_t s = 0; s < n; ++s) {
               const S* p = xs->data.data() + (s * c + ch) * hw;
               const S* dy = ys->grad.data() + (s * c + ch) * hw;
               for (std::int64_t j = 0; j < hw; ++j) {
                 sum_dy += dy[j];
                 sum_dy_xhat += dy[j] * (p[j] - mu) * is;
               }
             }
             if (gg) gs->grad[ch] += static_cast<S>(sum_dy_xhat);
             if (gb) bs->grad[ch] += static_cast<S>(sum_dy);
             if (!gx) continue;
             if (training) {
               const S k1 = gam * is / static_cast<S>(m);
               for (std::int64_t s = 0; s < n; ++s) {
                 const S* p = xs->data.data() + (s * c + ch) * hw;
                 const S* dy = ys->grad.data() + (s * c + ch) * hw;
                 S* dx = xs->grad.data() + (s * c + ch) * hw;
                 for (std::int64_t j = 0; j < hw; ++j) {
                   const S xhat = (p[j] - mu) * is;
                   dx[j] += k1 * (static_cast<S>(m) * dy[j] - static_cast<S>(sum_dy) -
                                  xhat * static_cast<S>(sum_dy_xhat));
                 }
               }
             } else {
               const S k1 = gam * is;
               for (std::int64_t s = 0; s < n; ++s) {
                 const S* dy = ys->grad.data() + (s * c + ch) * hw;
                 S* dx = xs->grad.data() + (s * c + ch) * hw;
                 for (std::int64_t j = 0; j < hw; ++j) dx[j] += k1 * dy[j];
               }
             }
           }
         }});
  }
  return y;
}

// ---------------------------------------------------------------------------
// Non-differentiable helpers
// ---------------------------------------------------------------------------

template <typename S>
std::vector<std::int64_t> argmax_rows(const Tensor<S>& x) {
  if (x.rank() != 2) {
    throw std::invalid_argument("argmax_rows: expects [N,K], got " + shape_str(x.shape()));
  }
  const auto n = x.dim(0), k = x.dim(1);
  std::vector<std::int64_t> out(static_cast<std::size_t>(n));
  for (std::int64_t r = 0; r < n; ++r) {
    const S* p = x.data() + r * k;
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < k; ++j) {
      if (p[j] > p[best]) best = j;
    }
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

template <typename S>
double accuracy(const Tensor<S>& logits, const std::vector<std::int64_t>& labels) {
  auto pred = argmax_rows(logits);
  if (pred.size() != labels.size()) {
    throw std::invalid_argument("accuracy: prediction/label count mismatch");
  }
  std::int64_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += (pred[i] == labels[i]) ? 1 : 0;
  return pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace nettrim
