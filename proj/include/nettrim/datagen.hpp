#pragma once

#include "nettrim/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nettrim {

struct Dataset {
  TensorF images;  // [N, 1, 28, 28], values in [0, 1]
  std::vector<std::int64_t> labels;
  std::int64_t num_classes = 0;
  std::string split;  // "train" | "test"

  std::int64_t size() const { return images.defined() ? images.dim(0) : 0; }
  void validate() const;  // label range + >= 10 samples per class
};

struct TaskData {
  Dataset train, test;
  std::string difficulty;
  std::uint64_t seed = 0;
};

// Difficulty knob over rendered parametric glyphs (28x28, single channel):
//   source: 10 coarse families (disks, bars, crosses, polygons, arcs, ...)
//   easy:   2 well-separated families
//   hard:   10 families distinguished only by fine geometry (polygon vertex
//           count, arc angular extent) under high intra-class jitter
// All difficulties share the same noise model: per-pixel uniform jitter plus
// a mild random affine warp.  Deterministic in (difficulty, sizes, seed);
// per-sample streams derive from (seed, difficulty, split, index).
TaskData gen_task(const std::string& difficulty, std::int64_t n_train, std::int64_t n_test,
                  std::uint64_t seed);

std::int64_t task_class_count(const std::string& difficulty);

// --- IDX interchange --------------------------------------------------------

void write_idx_images(const std::string& path, const TensorF& images);
void write_idx_labels(const std::string& path, const std::vector<std::int64_t>& labels,
                      std::int64_t num_classes);
Dataset read_idx(const std::string& images_path, const std::string& labels_path);

// --- difficulty oracle -------------------------------------------------------
// Multinomial logistic regression on raw pixels (independent of the tensor
// engine); returns test accuracy.
double linear_probe_accuracy(const TaskData& task, int iterations = 300);

}  // namespace nettrim
