#include "nettrim/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "nettrim/rng.hpp"

namespace nettrim {

namespace {

void put_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32_le(std::istream& is, const std::filesystem::path& file) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("nttn: truncated header in " + file.string());
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

bool host_is_little_endian() {
  const std::uint32_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  return b == 1;
}

}  // namespace

void write_nttn(const std::filesystem::path& file, const Shape& shape, const float* data) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("nttn: cannot open " + file.string() + " for writing");
  os.write("NTTN", 4);
  put_u32_le(os, kNttnVersion);
  put_u32_le(os, static_cast<std::uint32_t>(shape.size()));
  std::int64_t n = 1;
  for (auto d : shape) {
    put_u32_le(os, static_cast<std::uint32_t>(d));
    n *= d;
  }
  if (host_is_little_endian()) {
    os.write(reinterpret_cast<const char*>(data), n * static_cast<std::int64_t>(sizeof(float)));
  } else {
    for (std::int64_t i = 0; i < n; ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, data + i, 4);
      put_u32_le(os, bits);
    }
  }
  if (!os) throw std::runtime_error("nttn: write failed for " + file.string());
}

NttnTensor read_nttn(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("nttn: cannot open " + file.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "NTTN", 4) != 0) {
    throw std::runtime_error("nttn: bad magic in " + file.string());
  }
  const auto version = get_u32_le(is, file);
  if (version != kNttnVersion) {
    throw std::runtime_error("nttn: unsupported version " + std::to_string(version) + " in " +
                             file.string());
  }
  const auto rank = get_u32_le(is, file);
  if (rank > 8) throw std::runtime_error("nttn: implausible rank in " + file.string());
  NttnTensor t;
  std::int64_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = get_u32_le(is, file);
    t.shape.push_back(static_cast<std::int64_t>(d));
    n *= static_cast<std::int64_t>(d);
  }
  t.data.resize(static_cast<std::size_t>(n));
  if (host_is_little_endian()) {
    if (!is.read(reinterpret_cast<char*>(t.data.data()),
                 n * static_cast<std::int64_t>(sizeof(float)))) {
      throw std::runtime_error("nttn: truncated payload in " + file.string());
    }
  } else {
    for (std::int64_t i = 0; i < n; ++i) {
      const auto bits = get_u32_le(is, file);
      std::memcpy(&t.data[static_cast<std::size_t>(i)], &bits, 4);
    }
  }
  return t;
}

std::uint64_t checkpoint_digest(const std::map<std::string, NttnTensor>& tensors) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [name, t] : tensors) {  // std::map: already sorted by name
    h = fnv1a(name.data(), name.size(), h);
    for (auto d : t.shape) h = fnv1a(&d, sizeof(d), h);
    h = fnv1a(t.data.data(), t.data.size() * sizeof(float), h);
  }
  return h;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void save_state_dir(const std::filesystem::path& dir,
                    const std::map<std::string, NttnTensor>& tensors,
                    const std::map<std::string, std::string>& meta) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "nttn-dir";
  manifest["version"] = kNttnVersion;
  manifest["digest"] = hex64(checkpoint_digest(tensors));
  manifest["meta"] = meta;
  nlohmann::json list = nlohmann::json::object();
  for (const auto& [name, t] : tensors) {
    const std::string file = name + ".nttn";
    write_nttn(dir / file, t.shape, t.data.data());
    list[name] = {{"file", file}, {"shape", t.shape}};
  }
  manifest["tensors"] = list;
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) {
    throw std::runtime_error("checkpoint: cannot write manifest in " + dir.string());
  }
  os << manifest.dump(2) << '\n';
}

LoadedState load_state_dir(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream is(manifest_path);
  if (!is) {
    throw std::runtime_error("checkpoint: no manifest.json in " + dir.string());
  }
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: unreadable manifest " + manifest_path.string() +
                             ": " + e.what());
  }
  if (manifest.value("format", "") != "nttn-dir") {
    throw std::runtime_error("checkpoint: " + manifest_path.string() +
                             " is not an nttn-dir manifest");
  }
  LoadedState state;
  if (manifest.contains("meta")) {
    for (const auto& [k, v] : manifest["meta"].items()) {
      state.meta[k] = v.get<std::string>();
    }
  }
  for (const auto& [name, entry] : manifest["tensors"].items()) {
    const auto file = dir / entry["file"].get<std::string>();
    NttnTensor t = read_nttn(file);
    const auto expected = entry["shape"].get<Shape>();
    if (t.shape != expected) {
      throw std::runtime_error("checkpoint: " + file.string() + " has shape " +
                               shape_str(t.shape) + " but manifest says " +
                               shape_str(expected));
    }
    state.tensors.emplace(name, std::move(t));
  }
  const auto recorded = manifest.value("digest", "");
  const auto actual = hex64(checkpoint_digest(state.tensors));
  if (recorded != actual) {
    throw std::runtime_error("checkpoint: digest mismatch in " + dir.string() +
                             " (manifest " + recorded + ", payload " + actual + ")");
  }
  return state;
}

}  // namespace nettrim
