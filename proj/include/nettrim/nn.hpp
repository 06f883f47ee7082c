#pragma once

#include "nettrim/arch.hpp"
#include "nettrim/ops.hpp"
#include "nettrim/rng.hpp"
#include "nettrim/tensor.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace nettrim {

template <typename S>
using NamedTensors = std::vector<std::pair<std::string, Tensor<S>>>;

// He fan-in normal initialization for conv/linear weights.
template <typename S>
void he_init(Tensor<S>& w, std::int64_t fan_in, Rng rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < w.numel(); ++i) {
    w.data()[i] = static_cast<S>(rng.normal(0.0, stddev));
  }
}

template <typename S>
struct Conv2dLayer {
  Tensor<S> w;  // [co, ci, k, k]
  Tensor<S> b;  // optional, [co]
  bool has_bias = false;
  Conv2dSpec spec;

  static Conv2dLayer make(std::int64_t ci, std::int64_t co, std::int64_t k,
                          std::int64_t stride, std::int64_t pad, bool bias, Rng rng) {
    Conv2dLayer layer;
    layer.w = Tensor<S>(Shape{co, ci, k, k});
    he_init(layer.w, ci * k * k, rng);
    layer.w.set_requires_grad(true);
    layer.has_bias = bias;
    if (bias) {
      layer.b = Tensor<S>(Shape{co});
      layer.b.set_requires_grad(true);
    }
    layer.spec = Conv2dSpec{stride, pad};
    return layer;
  }

  Tensor<S> forward(const Tensor<S>& x) {
    if (has_bias) return conv2d(x, w, b, spec);
    Tensor<S> zero_b(Shape{w.dim(0)});
    return conv2d(x, w, zero_b, spec);
  }

  void params(std::vector<Tensor<S>>& out) {
    out.push_back(w);
    if (has_bias) out.push_back(b);
  }
  void state(NamedTensors<S>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w", w);
    if (has_bias) out.emplace_back(prefix + ".b", b);
  }
};

template <typename S>
struct BatchNorm2dLayer {
  Tensor<S> gamma, beta, running_mean, running_var;
  BatchNormState bn;

  static BatchNorm2dLayer make(std::int64_t c) {
    BatchNorm2dLayer layer;
    layer.gamma = Tensor<S>(Shape{c}, S(1));
    layer.beta = Tensor<S>(Shape{c}, S(0));
    layer.running_mean = Tensor<S>(Shape{c}, S(0));
    layer.running_var = Tensor<S>(Shape{c}, S(1));
    layer.gamma.set_requires_grad(true);
    layer.beta.set_requires_grad(true);
    return layer;
  }

  Tensor<S> forward(const Tensor<S>& x, bool training) {
    return batchnorm2d(x, gamma, beta, running_mean, running_var, training, bn);
  }

  void params(std::vector<Tensor<S>>& out) {
    out.push_back(gamma);
    out.push_back(beta);
  }
  void state(NamedTensors<S>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
    out.emplace_back(prefix + ".running_mean", running_mean);
    out.emplace_back(prefix + ".running_var", running_var);
  }
};

template <typename S>
struct LinearLayer {
  Tensor<S> w;  // [co, ci]
  Tensor<S> b;  // [co]

  static LinearLayer make(std::int64_t ci, std::int64_t co, Rng rng) {
    LinearLayer layer;
    layer.w = Tensor<S>(Shape{co, ci});
    he_init(layer.w, ci, rng);
    layer.w.set_requires_grad(true);
    layer.b = Tensor<S>(Shape{co});
    layer.b.set_requires_grad(true);
    return layer;
  }

  Tensor<S> forward(const Tensor<S>& x) { return linear(x, w, b); }

  void params(std::vector<Tensor<S>>& out) {
    out.push_back(w);
    out.push_back(b);
  }
  void state(NamedTensors<S>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }
};

// Two 3x3 convolutions with normalization; identity shortcut, or a projected
// one (1x1 conv + norm) when shape changes.
template <typename S>
struct ResidualBlockLayer {
  Conv2dLayer<S> conv1, conv2;
  BatchNorm2dLayer<S> bn1, bn2;
  bool projects = false;
  Conv2dLayer<S> proj;
  BatchNorm2dLayer<S> bnp;

  static ResidualBlockLayer make(std::int64_t ci, std::int64_t co, std::int64_t stride,
                                 Rng rng) {
    ResidualBlockLayer blk;
    blk.conv1 = Conv2dLayer<S>::make(ci, co, 3, stride, 1, false, rng.split("conv1"));
    blk.bn1 = BatchNorm2dLayer<S>::make(co);
    blk.conv2 = Conv2dLayer<S>::make(co, co, 3, 1, 1, false, rng.split("conv2"));
    blk.bn2 = BatchNorm2dLayer<S>::make(co);
    blk.projects = stride != 1 || ci != co;
    if (blk.projects) {
      blk.proj = Conv2dLayer<S>::make(ci, co, 1, stride, 0, false, rng.split("proj"));
      blk.bnp = BatchNorm2dLayer<S>::make(co);
    }
    return blk;
  }

  Tensor<S> forward(const Tensor<S>& x, bool training) {
    auto h = relu(bn1.forward(conv1.forward(x), training));
    h = bn2.forward(conv2.forward(h), training);
    auto shortcut = projects ? bnp.forward(proj.forward(x), training) : x;
    return relu(add(h, shortcut));
  }

  void params(std::vector<Tensor<S>>& out) {
    conv1.params(out);
    bn1.params(out);
    conv2.params(out);
    bn2.params(out);
    if (projects) {
      proj.params(out);
      bnp.params(out);
    }
  }
  void state(NamedTensors<S>& out, const std::string& prefix) const {
    conv1.state(out, prefix + ".conv1");
    bn1.state(out, prefix + ".bn1");
    conv2.state(out, prefix + ".conv2");
    bn2.state(out, prefix + ".bn2");
    if (projects) {
      proj.state(out, prefix + ".proj");
      bnp.state(out, prefix + ".bnp");
    }
  }
};

// Proxy path: spatial max-pool down to the target resolution (omitted when
// sizes already match), then 1x1 conv + normalization.
template <typename S>
struct ProxyLayer {
  bool pools = false;
  Pool2dSpec pool;
  Conv2dLayer<S> conv;
  BatchNorm2dLayer<S> bn;

  static ProxyLayer make(std::int64_t ci, std::int64_t co, std::int64_t s_in,
                         std::int64_t s_out, Rng rng) {
    ProxyLayer p;
    if (s_in != s_out) {
      const std::int64_t ratio = pool_ratio(s_in, s_out);
      p.pool = Pool2dSpec{ratio, ratio, /*ceil_mode=*/true};
      if (pool_out_size(s_in, p.pool) != s_out) {
        throw std::invalid_argument("proxy: pooling " + std::to_string(s_in) + " with k=s=" +
                                    std::to_string(ratio) + " does not land on " +
                                    std::to_string(s_out));
      }
      p.pools = true;
    }
    p.conv = Conv2dLayer<S>::make(ci, co, 1, 1, 0, false, rng.split("conv"));
    p.bn = BatchNorm2dLayer<S>::make(co);
    return p;
  }

  Tensor<S> forward(const Tensor<S>& x, bool training) {
    auto h = pools ? maxpool2d(x, pool) : x;
    return bn.forward(conv.forward(h), training);
  }

  void params(std::vector<Tensor<S>>& out) {
    conv.params(out);
    bn.params(out);
  }
  void state(NamedTensors<S>& out, const std::string& prefix) const {
    conv.state(out, prefix + ".conv");
    bn.state(out, prefix + ".bn");
  }
};

template <typename S>
void freeze_tensors(std::vector<Tensor<S>>& params) {
  for (auto& p : params) p.set_requires_grad(false);
}

// Digest of tensor payload bytes, for frozen-state audits.
template <typename S>
std::uint64_t state_digest(const NamedTensors<S>& state) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : state) {
    h = fnv1a(name.data(), name.size(), h);
    h = fnv1a(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(S), h);
  }
  return h;
}

}  // namespace nettrim
