#pragma once

#include <string>
#include <utility>
#include <vector>

#include "svdd/config.hpp"
#include "svdd/data.hpp"
#include "svdd/training.hpp"

namespace svdd::runner {

// Train/test pair per the config's dataset selection, with the label mask
// already stratified to train.label_fraction.
std::pair<data::Dataset, data::Dataset> load_datasets(const config::ExperimentConfig& cfg);

struct RunOutput {
  training::RunResult result;
  std::string checkpoint_path;
  std::string metrics_path;
  std::string config_path;
};

// Creates the run directory, writes the resolved config, trains, writes
// checkpoint + metrics.csv.
RunOutput train_teacher(const config::ExperimentConfig& cfg);

// Loads the teacher checkpoint (unless transfer_weight is 0 and none is
// given, which is the scratch baseline) and trains the student under
// cfg.train.mechanism.
RunOutput distill(const config::ExperimentConfig& cfg);

training::EvalResult eval_checkpoint(const config::ExperimentConfig& cfg, const std::string& checkpoint,
                                     const std::string& model_name);

struct SweepRow {
  int k = 0;
  std::string variant;  // pool | stride
  double final_test_acc = 0.0;
  double final_transfer_loss = 0.0;
  std::string status = "ok";  // ok | failed: <reason>
};

// One distill run per (k, student variant); infeasible entries are marked
// failed and the sweep continues. `parallel` runs entries concurrently in
// disjoint output dirs.
std::vector<SweepRow> sweep_k(const config::ExperimentConfig& cfg, std::vector<int> k_list,
                              bool parallel);

// summary.csv schema: k,variant,final_test_acc,final_transfer_loss,status
void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);

}  // namespace svdd::runner
