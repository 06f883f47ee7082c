// On-disk weights.  Single tensors use a small binary format ("NTTN": magic,
// version, rank, dims, fp32 payload, all little-endian).  A model state is a
// directory of one .nttn file per named tensor plus a manifest.json carrying
// shapes, a payload digest, and free-form metadata.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "nettrim/nn.hpp"
#include "nettrim/tensor.hpp"

namespace nettrim {

inline constexpr std::uint32_t kNttnVersion = 1;

struct NttnTensor {
  Shape shape;
  std::vector<float> data;
};

void write_nttn(const std::filesystem::path& file, const Shape& shape, const float* data);
NttnTensor read_nttn(const std::filesystem::path& file);

// FNV-1a over sorted names, shapes, and fp32 payload bytes.
std::uint64_t checkpoint_digest(const std::map<std::string, NttnTensor>& tensors);

struct LoadedState {
  std::map<std::string, NttnTensor> tensors;
  std::map<std::string, std::string> meta;
};

// Writes one .nttn per tensor plus manifest.json into `dir` (created if
// missing; existing files overwritten).
void save_state_dir(const std::filesystem::path& dir,
                    const std::map<std::string, NttnTensor>& tensors,
                    const std::map<std::string, std::string>& meta);

// Reads manifest.json and every listed tensor; recomputes the digest and
// fails loudly on mismatch, missing files, or shape drift vs. the manifest.
LoadedState load_state_dir(const std::filesystem::path& dir);

template <typename S>
std::map<std::string, NttnTensor> to_nttn(const NamedTensors<S>& state) {
  std::map<std::string, NttnTensor> out;
  for (const auto& [name, t] : state) {
    NttnTensor nt;
    nt.shape = t.shape();
    nt.data.resize(static_cast<std::size_t>(t.numel()));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      nt.data[static_cast<std::size_t>(i)] = static_cast<float>(t.data()[i]);
    }
    if (!out.emplace(name, std::move(nt)).second) {
      throw std::logic_error("checkpoint: duplicate tensor name '" + name + "'");
    }
  }
  return out;
}

template <typename S>
void save_state_dir(const std::filesystem::path& dir, const NamedTensors<S>& state,
                    const std::map<std::string, std::string>& meta) {
  save_state_dir(dir, to_nttn(state), meta);
}

// Copies loaded payloads into an existing model's tensors.  The destination
// defines the expected inventory: missing names, extra names, and shape
// mismatches are all hard errors (everything is checked before any write).
template <typename S>
void restore_state(NamedTensors<S>& dst, const LoadedState& src) {
  std::set<std::string> expected;
  for (const auto& [name, t] : dst) {
    auto it = src.tensors.find(name);
    if (it == src.tensors.end()) {
      throw std::runtime_error("checkpoint: tensor '" + name + "' missing from state dir");
    }
    if (it->second.shape != t.shape()) {
      throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " +
                               shape_str(it->second.shape) + " on disk but " +
                               shape_str(t.shape()) + " in the model");
    }
    expected.insert(name);
  }
  for (const auto& [name, nt] : src.tensors) {
    if (!expected.count(name)) {
      throw std::runtime_error("checkpoint: state dir has unexpected tensor '" + name + "'");
    }
  }
  for (auto& [name, t] : dst) {
    const auto& nt = src.tensors.at(name);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      t.data()[i] = static_cast<S>(nt.data[static_cast<std::size_t>(i)]);
    }
  }
}

}  // namespace nettrim
