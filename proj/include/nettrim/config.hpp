// Experiment configuration: one JSON file drives data generation, backbone
// pretraining, per-task tailoring, and the pruning sweep.  Rates, epoch
// counts, and penalty weights live here, not in code.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nettrim/arch.hpp"
#include "nettrim/trainer.hpp"

namespace nettrim {

struct DataConfig {
  std::int64_t n_train = 512;
  std::int64_t n_test = 256;

  bool operator==(const DataConfig&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  int k = 3;  // proxy skip window
  std::vector<std::int64_t> channels = {8, 8, 16, 16, 32, 32, 64, 64};
  std::int64_t input_size = 28;
  std::int64_t input_channels = 1;
  std::int64_t source_classes = 10;
  DataConfig data;
  TrainConfig pretrain;
  TrainConfig teacher;
  TrainConfig student;
  TrainConfig finetune;
  std::vector<int> n_values = {0, 2, 4, 6};
  std::vector<std::string> tasks = {"easy", "hard"};
  std::int64_t eval_limit = 256;  // per-epoch test-accuracy cap; 0 = full test set

  BackbonePlan plan() const {
    BackbonePlan p;
    p.input_channels = input_channels;
    p.input_size = input_size;
    p.channels = channels;
    p.num_classes = source_classes;
    p.validate();
    return p;
  }

  void validate() const;

  bool operator==(const ExperimentConfig&) const = default;
};

// The documented defaults (lr/epoch settings chosen by pilot runs).
ExperimentConfig default_experiment_config();

std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const std::string& text);

void save_config(const std::string& path, const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

}  // namespace nettrim
