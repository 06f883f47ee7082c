#include "nettrim/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace nettrim {

namespace {

void put_u32_be(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32_be(std::istream& is, const std::string& path, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("idx: " + path + ": truncated while reading " + what);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

std::vector<unsigned char> read_payload(std::istream& is, const std::string& path,
                                        std::size_t expected) {
  std::vector<unsigned char> buf(expected);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
  const auto got = static_cast<std::size_t>(is.gcount());
  if (got != expected) {
    throw std::runtime_error("idx: " + path + ": truncated payload, expected " +
                             std::to_string(expected) + " bytes, got " + std::to_string(got));
  }
  return buf;
}

}  // namespace

void write_idx_images(const std::string& path, const TensorF& images) {
  if (!images.defined() || images.rank() != 4 || images.dim(1) != 1) {
    throw std::invalid_argument("idx: images must be [N,1,H,W]");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("idx: cannot open " + path + " for writing");
  put_u32_be(os, 0x00000803);
  put_u32_be(os, static_cast<std::uint32_t>(images.dim(0)));
  put_u32_be(os, static_cast<std::uint32_t>(images.dim(2)));
  put_u32_be(os, static_cast<std::uint32_t>(images.dim(3)));
  std::vector<unsigned char> row(static_cast<std::size_t>(images.numel()));
  for (std::int64_t i = 0; i < images.numel(); ++i) {
    const float v = std::clamp(images.at(i), 0.0f, 1.0f);
    row[static_cast<std::size_t>(i)] =
        static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  if (!os) throw std::runtime_error("idx: write failed for " + path);
}

void write_idx_labels(const std::string& path, const std::vector<std::int64_t>& labels,
                      std::int64_t num_classes) {
  if (num_classes <= 0 || num_classes > 255) {
    throw std::invalid_argument("idx: class count must fit in a byte");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("idx: cannot open " + path + " for writing");
  put_u32_be(os, 0x00000801);
  put_u32_be(os, static_cast<std::uint32_t>(labels.size()));
  for (auto l : labels) {
    if (l < 0 || l >= num_classes) {
      throw std::invalid_argument("idx: label " + std::to_string(l) + " out of range");
    }
    const unsigned char b = static_cast<unsigned char>(l);
    os.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!os) throw std::runtime_error("idx: write failed for " + path);
}

Dataset read_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream is(images_path, std::ios::binary);
  if (!is) throw std::runtime_error("idx: cannot open " + images_path);
  const auto magic = get_u32_be(is, images_path, "magic");
  if (magic != 0x00000803) {
    throw std::runtime_error("idx: " + images_path + ": bad image magic 0x" +
                             [&] {
                               char buf[16];
                               std::snprintf(buf, sizeof buf, "%08x", magic);
                               return std::string(buf);
                             }());
  }
  const auto n = get_u32_be(is, images_path, "count");
  const auto h = get_u32_be(is, images_path, "height");
  const auto w = get_u32_be(is, images_path, "width");
  const std::size_t expected = static_cast<std::size_t>(n) * h * w;
  const auto pixels = read_payload(is, images_path, expected);

  std::ifstream ls(labels_path, std::ios::binary);
  if (!ls) throw std::runtime_error("idx: cannot open " + labels_path);
  const auto lmagic = get_u32_be(ls, labels_path, "magic");
  if (lmagic != 0x00000801) {
    throw std::runtime_error("idx: " + labels_path + ": bad label magic");
  }
  const auto ln = get_u32_be(ls, labels_path, "count");
  if (ln != n) {
    throw std::runtime_error("idx: image/label count mismatch: " + std::to_string(n) +
                             " images vs " + std::to_string(ln) + " labels");
  }
  const auto raw_labels = read_payload(ls, labels_path, ln);

  Dataset d;
  d.images = TensorF(Shape{static_cast<std::int64_t>(n), 1, static_cast<std::int64_t>(h),
                           static_cast<std::int64_t>(w)});
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    d.images.data()[i] = static_cast<float>(pixels[i]) / 255.0f;
  }
  d.labels.resize(raw_labels.size());
  std::int64_t max_label = 0;
  for (std::size_t i = 0; i < raw_labels.size(); ++i) {
    d.labels[i] = raw_labels[i];
    max_label = std::max<std::int64_t>(max_label, raw_labels[i]);
  }
  d.num_classes = max_label + 1;
  return d;
}

}  // namespace nettrim
