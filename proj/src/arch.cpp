#include "nettrim/arch.hpp"

#include <algorithm>
#include <stdexcept>

namespace nettrim {

std::string path_name(PathId p) {
  if (p.pretrained()) return "G" + std::to_string(p.dst);
  return "A" + std::to_string(p.src) + "_" + std::to_string(p.dst);
}

PathId parse_path_name(const std::string& name) {
  try {
    if (!name.empty() && name[0] == 'G') {
      const int l = std::stoi(name.substr(1));
      return PathId{l, l};
    }
    if (!name.empty() && name[0] == 'A') {
      const auto sep = name.find('_');
      if (sep != std::string::npos) {
        const int i = std::stoi(name.substr(1, sep - 1));
        const int j = std::stoi(name.substr(sep + 1));
        return PathId{i, j};
      }
    }
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("arch: unparsable path name '" + name + "'");
}

void BackbonePlan::validate() const {
  if (channels.size() < 4) {
    throw std::invalid_argument("plan: depth must be at least 4, got " +
                                std::to_string(channels.size()));
  }
  if (input_channels <= 0 || input_size <= 0 || num_classes <= 1) {
    throw std::invalid_argument("plan: input/channel/class counts must be positive");
  }
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] <= 0) throw std::invalid_argument("plan: non-positive channel count");
    if (i > 0 && channels[i] < channels[i - 1]) {
      throw std::invalid_argument("plan: channel plan must be non-decreasing (block " +
                                  std::to_string(i + 1) + " shrinks " +
                                  std::to_string(channels[i - 1]) + " -> " +
                                  std::to_string(channels[i]) + ")");
    }
  }
  // All spatial sizes must stay positive.
  if (node_spatial(depth()) <= 0) {
    throw std::invalid_argument("plan: input size too small for the downsampling stages");
  }
}

std::int64_t BackbonePlan::node_channels(std::int64_t node) const {
  if (node < 0 || node > depth()) {
    throw std::out_of_range("plan: node " + std::to_string(node) + " out of range");
  }
  // Node 0 is the stem output, already at the first block's width.
  return node == 0 ? channels.front() : channels[static_cast<std::size_t>(node - 1)];
}

std::int64_t BackbonePlan::block_stride(std::int64_t l) const {
  if (l < 1 || l > depth()) {
    throw std::out_of_range("plan: block " + std::to_string(l) + " out of range");
  }
  const std::int64_t in_ch = node_channels(l - 1);
  return channels[static_cast<std::size_t>(l - 1)] > in_ch ? 2 : 1;
}

std::int64_t BackbonePlan::node_spatial(std::int64_t node) const {
  if (node < 0 || node > depth()) {
    throw std::out_of_range("plan: node " + std::to_string(node) + " out of range");
  }
  std::int64_t s = input_size;
  for (std::int64_t l = 1; l <= node; ++l) {
    if (block_stride(l) == 2) s = (s + 2 - 3) / 2 + 1;  // 3x3 conv, stride 2, pad 1
  }
  return s;
}

bool BackbonePlan::block_projects(std::int64_t l) const {
  return block_stride(l) == 2 || node_channels(l - 1) != channels[static_cast<std::size_t>(l - 1)];
}

BackbonePlan default_plan() { return BackbonePlan{}; }

std::vector<int> proxy_sources(int l, int k) {
  std::vector<int> out;
  if (k < 1) throw std::invalid_argument("proxy_sources: skip window must be >= 1");
  for (int p = std::max(l - k, 1); p < l; ++p) out.push_back(p);
  return out;
}

std::vector<PathId> incoming_paths(int l, int k) {
  std::vector<PathId> out;
  for (int p : proxy_sources(l, k)) out.push_back(PathId{p, l});
  out.push_back(PathId{l, l});
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<PathId> all_paths(int L, int k) {
  std::vector<PathId> out;
  for (int l = 1; l <= L; ++l) {
    auto in = incoming_paths(l, k);
    out.insert(out.end(), in.begin(), in.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::int64_t conv_flops(std::int64_t h_out, std::int64_t w_out, std::int64_t c_out,
                        std::int64_t c_in, std::int64_t kh, std::int64_t kw) {
  return 2 * h_out * w_out * c_out * (c_in * kh * kw);
}

std::int64_t linear_flops(std::int64_t c_in, std::int64_t c_out) { return 2 * c_in * c_out; }

std::int64_t pool_ratio(std::int64_t s_in, std::int64_t s_out) {
  if (s_in < s_out || s_out <= 0) {
    throw std::invalid_argument("pool_ratio: cannot pool " + std::to_string(s_in) + " -> " +
                                std::to_string(s_out));
  }
  return (s_in + s_out - 1) / s_out;
}

BlockSpec stem_spec(const BackbonePlan& plan) {
  BlockSpec s;
  s.kind = BlockKind::Stem;
  s.in_channels = plan.input_channels;
  s.out_channels = plan.channels.front();
  s.spatial_in = plan.input_size;
  s.spatial_out = plan.input_size;
  const std::int64_t n_out = s.spatial_out * s.spatial_out * s.out_channels;
  s.param_count = 9 * s.in_channels * s.out_channels + 2 * s.out_channels;
  s.flops = conv_flops(s.spatial_out, s.spatial_out, s.out_channels, s.in_channels, 3, 3) +
            n_out /*norm*/ + n_out /*relu*/;
  return s;
}

BlockSpec residual_spec(const BackbonePlan& plan, std::int64_t l) {
  BlockSpec s;
  s.kind = BlockKind::PretrainedResidual;
  s.in_channels = plan.node_channels(l - 1);
  s.out_channels = plan.node_channels(l);
  s.spatial_in = plan.node_spatial(l - 1);
  s.spatial_out = plan.node_spatial(l);
  const bool proj = plan.block_projects(l);
  const std::int64_t ci = s.in_channels, co = s.out_channels, so = s.spatial_out;
  const std::int64_t n_out = so * so * co;
  s.param_count = 9 * ci * co + 2 * co   // conv1 + norm1
                  + 9 * co * co + 2 * co  // conv2 + norm2
                  + (proj ? ci * co + 2 * co : 0);
  s.flops = conv_flops(so, so, co, ci, 3, 3) + n_out /*norm1*/ + n_out /*relu1*/ +
            conv_flops(so, so, co, co, 3, 3) + n_out /*norm2*/ +
            (proj ? conv_flops(so, so, co, ci, 1, 1) + n_out /*proj norm*/ : 0) +
            n_out /*add*/ + n_out /*relu2*/;
  return s;
}

BlockSpec proxy_spec(const BackbonePlan& plan, PathId p) {
  if (p.pretrained()) throw std::invalid_argument("proxy_spec: " + path_name(p) + " is not a proxy");
  BlockSpec s;
  s.kind = BlockKind::Proxy;
  s.in_channels = plan.node_channels(p.src);
  s.out_channels = plan.node_channels(p.dst);
  s.spatial_in = plan.node_spatial(p.src);
  s.spatial_out = plan.node_spatial(p.dst);
  const std::int64_t n_out = s.spatial_out * s.spatial_out * s.out_channels;
  const std::int64_t n_pool = s.spatial_out * s.spatial_out * s.in_channels;
  s.param_count = s.in_channels * s.out_channels + 2 * s.out_channels;  // 1x1 conv + norm
  s.flops = (s.spatial_in != s.spatial_out ? n_pool : 0) +
            conv_flops(s.spatial_out, s.spatial_out, s.out_channels, s.in_channels, 1, 1) +
            n_out /*norm*/;
  return s;
}

BlockSpec classifier_spec(const BackbonePlan& plan, std::int64_t num_classes) {
  BlockSpec s;
  s.kind = BlockKind::Classifier;
  s.in_channels = plan.node_channels(plan.depth());
  s.out_channels = num_classes;
  s.spatial_in = plan.node_spatial(plan.depth());
  s.spatial_out = 1;
  s.param_count = s.in_channels * num_classes + num_classes;
  s.flops = s.in_channels /*global pool*/ + linear_flops(s.in_channels, num_classes);
  return s;
}

}  // namespace nettrim
