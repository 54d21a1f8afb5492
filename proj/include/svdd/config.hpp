#pragma once

#include <map>
#include <string>

#include "svdd/training.hpp"

namespace svdd::config {

// A run is fully determined by this config plus nothing else; the resolved
// form is written next to the results. Serialization is a versioned, sorted
// `dotted.key = value` text format, one key per line, so configs diff
// cleanly.
struct ExperimentConfig {
  std::string run_id = "run";
  std::string out_dir = "runs/run";

  std::string dataset = "synthetic";  // synthetic | cifar10 | cifar100
  std::string data_root;              // falls back to $SVDD_DATA_ROOT
  int synthetic_classes = 8;
  int synthetic_per_class = 150;
  int synthetic_test_per_class = 40;

  std::string teacher_model = "tiny-vgg-T";
  std::string student_model = "tiny-vgg-S";
  std::string teacher_checkpoint;

  training::TrainConfig train;

  std::string serialize() const;
  static ExperimentConfig parse(const std::string& text);

  void save(const std::string& path) const;
  static ExperimentConfig load(const std::string& path);

  void validate() const;
};

inline constexpr int kConfigVersion = 1;

}  // namespace svdd::config
