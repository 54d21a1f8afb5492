#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "svdd/data.hpp"
#include "svdd/distill.hpp"
#include "svdd/models.hpp"

namespace svdd::training {

enum class Mechanism { kOneStage, kTwoStage };
enum class ClipMode { kLiteral, kInverted, kOff };

std::string to_string(Mechanism m);
std::string to_string(ClipMode m);
Mechanism mechanism_from_string(const std::string& s);
ClipMode clip_mode_from_string(const std::string& s);

struct TrainConfig {
  Mechanism mechanism = Mechanism::kOneStage;
  int k = 1;
  double beta = 8.0;
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 128;
  int epochs = 200;
  int lr_drop_every = 50;     // learning rate falls by lr_drop_factor this often
  double lr_drop_factor = 0.1;
  double label_fraction = 1.0;
  ClipMode clip_mode = ClipMode::kLiteral;
  double transfer_weight = 1.0;  // 0 disables the transfer task (scratch baseline)
  bool augment = true;
  data::AugmentConfig aug;
  std::uint64_t seed = 0;
};

// Epoch counter p starts at 0 and advances by 1 per epoch; it feeds the
// clipping sigmoid directly.
struct TrainState {
  int epoch = 0;
  double last_tau = 0.0;
  double last_clip_factor = 1.0;
};

struct EpochMetrics {
  int epoch = 0;
  int stage = 1;
  double lr = 0.0;
  double main_loss = 0.0;
  double transfer_loss = 0.0;
  double clip_factor_mean = 1.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  std::int64_t unlabeled = 0;
};

// CSV schema (stable, columns never reordered):
// epoch,stage,lr,main_loss,transfer_loss,clip_factor_mean,train_acc,test_acc,unlabeled_count
class MetricsWriter {
 public:
  explicit MetricsWriter(std::string path);
  void append(const EpochMetrics& m);
  void flush();
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::string buffer_;
};

struct RunResult {
  std::vector<EpochMetrics> history;
  double final_test_acc = 0.0;
  double final_transfer_loss = 0.0;
};

// Sum over layer modules of half the squared L2 distance between DFV pairs,
// all modules weighted equally.
double transfer_loss(const std::vector<distill::Dfv>& teacher, const std::vector<distill::Dfv>& student);

// Plain sum, unit weights; aborts (throws) on non-finite inputs.
double total_loss(double main, double transfer);

struct ClipDecision {
  double tau = 0.0;     // |grad_main| / |grad_trans|, +inf when the latter is 0
  double factor = 1.0;  // applied scale, always in (0, 1]
  bool scaled = false;  // false means bit-exact pass-through
};

// Adaptive transfer-gradient clipping over global (all-parameter) L2 norms.
// literal: scale by sigmoid(tau - p) when |grad_trans| < |grad_main|;
// inverted: scale in the complementary case; off: always pass through.
ClipDecision clip_transfer_gradient(const std::vector<std::vector<float>>& grad_main,
                                    std::vector<std::vector<float>>& grad_trans, int epoch,
                                    ClipMode mode);

// Mean accuracy (argmax vs true label) and mean labeled cross-entropy.
struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};
EvalResult evaluate(const models::Model& m, const data::Dataset& d, const std::vector<double>& means,
                    int batch_size);

// Transfer loss and its gradient norm for one batch, with the student's
// current parameters. The self-distillation fixed point (student a copy of
// the teacher) must report both near zero.
struct TransferProbe {
  double loss = 0.0;
  double grad_norm = 0.0;
};
TransferProbe transfer_fixed_point_probe(const models::Model& teacher, models::Model& student,
                                         const data::Dataset& d, int batch_size, int k, double beta,
                                         std::uint64_t seed);

// Plain cross-entropy training (teacher runs and the scratch baseline).
RunResult train_plain(models::Model& m, const TrainConfig& cfg, const data::Dataset& train,
                      const data::Dataset& test, MetricsWriter* writer);

// Self-supervised multi-task training: both gradients per step, adaptive
// clipping, single epoch budget.
RunResult run_one_stage(const models::Model& teacher, models::Model& student, const TrainConfig& cfg,
                        const data::Dataset& train, const data::Dataset& test, MetricsWriter* writer);

// Transfer-only initialization (stage 1) followed by main-task training
// (stage 2), cfg.epochs each, same hyper-parameters in both stages.
RunResult run_two_stage(const models::Model& teacher, models::Model& student, const TrainConfig& cfg,
                        const data::Dataset& train, const data::Dataset& test, MetricsWriter* writer);

}  // namespace svdd::training
