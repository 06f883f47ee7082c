#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

namespace nettrim {

// Path (i, j): i == j is the pre-trained block producing node j (its tensor
// input is node j-1); i < j is a proxy reading node i and writing into the
// merge at node j.
struct PathId {
  int src = 0;
  int dst = 0;
  bool pretrained() const { return src == dst; }
  auto operator<=>(const PathId&) const = default;
};

std::string path_name(PathId p);       // "G3" / "A1_3"
PathId parse_path_name(const std::string& name);

enum class BlockKind { Stem, PretrainedResidual, Proxy, Classifier };

struct BlockSpec {
  BlockKind kind = BlockKind::PretrainedResidual;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t spatial_in = 0;
  std::int64_t spatial_out = 0;
  std::int64_t param_count = 0;
  std::int64_t flops = 0;
};

// Square-input residual backbone plan.  Block l (1-based) maps node l-1 to
// node l; it downsamples by 2 exactly when its channel count increases.
struct BackbonePlan {
  std::int64_t input_channels = 1;
  std::int64_t input_size = 28;
  std::vector<std::int64_t> channels = {8, 8, 16, 16, 32, 32, 64, 64};
  std::int64_t num_classes = 10;

  std::int64_t depth() const { return static_cast<std::int64_t>(channels.size()); }
  void validate() const;  // throws std::invalid_argument on a bad plan
  std::int64_t node_channels(std::int64_t node) const;  // node 0..L
  std::int64_t node_spatial(std::int64_t node) const;
  std::int64_t block_stride(std::int64_t l) const;  // block 1..L
  bool block_projects(std::int64_t l) const;        // shortcut needs 1x1 projection
};

BackbonePlan default_plan();

// --- path enumeration -------------------------------------------------------

// Proxy sources for node l under skip window k: p in [max(l-k,1), l-1].
// k >= L behaves as dense.
std::vector<int> proxy_sources(int l, int k);
// All paths merging into node l: the pre-trained (l,l) plus window proxies,
// sorted by PathId.
std::vector<PathId> incoming_paths(int l, int k);
// Every path of the student graph, sorted.
std::vector<PathId> all_paths(int L, int k);

// --- cost accounting ---------------------------------------------------------
// FLOP rules: conv 2*Hout*Wout*Cout*(Cin*kh*kw); linear 2*Cin*Cout;
// pool / norm / relu / add count one op per output element.

std::int64_t conv_flops(std::int64_t h_out, std::int64_t w_out, std::int64_t c_out,
                        std::int64_t c_in, std::int64_t kh, std::int64_t kw);
std::int64_t linear_flops(std::int64_t c_in, std::int64_t c_out);

// ceil(s_in / s_out): the proxy max-pool kernel/stride.  Validated elsewhere
// to land exactly on the target size.
std::int64_t pool_ratio(std::int64_t s_in, std::int64_t s_out);

BlockSpec stem_spec(const BackbonePlan& plan);
BlockSpec residual_spec(const BackbonePlan& plan, std::int64_t l);
BlockSpec proxy_spec(const BackbonePlan& plan, PathId p);
BlockSpec classifier_spec(const BackbonePlan& plan, std::int64_t num_classes);

}  // namespace nettrim
