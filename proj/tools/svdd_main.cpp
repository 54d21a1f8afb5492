#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "svdd/config.hpp"
#include "svdd/models.hpp"
#include "svdd/runner.hpp"
#include "svdd/verify.hpp"

namespace {

namespace fs = std::filesystem;
using svdd::config::ExperimentConfig;

// Shared flags mirroring ExperimentConfig; a --config file is applied first,
// explicit flags override it.
void add_common_options(CLI::App* cmd, ExperimentConfig& cfg, std::string& config_file) {
  cmd->add_option("--config", config_file, "config file (key = value format)");
  cmd->add_option("--run-id", cfg.run_id, "run identifier");
  cmd->add_option("--out", cfg.out_dir, "output directory");
  cmd->add_option("--dataset", cfg.dataset, "synthetic | cifar10 | cifar100");
  cmd->add_option("--data-root", cfg.data_root, "dataset directory (or $SVDD_DATA_ROOT)");
  cmd->add_option("--synthetic-classes", cfg.synthetic_classes, "synthetic class count");
  cmd->add_option("--synthetic-per-class", cfg.synthetic_per_class, "synthetic train samples per class");
  cmd->add_option("--synthetic-test-per-class", cfg.synthetic_test_per_class,
                  "synthetic test samples per class");
  cmd->add_option("--teacher", cfg.teacher_model, "teacher preset name");
  cmd->add_option("--student", cfg.student_model, "student preset name");
  cmd->add_option("--seed", cfg.train.seed, "run seed");
  cmd->add_option("--epochs", cfg.train.epochs, "epochs (per stage for two_stage)");
  cmd->add_option("--batch-size", cfg.train.batch_size, "batch size");
  cmd->add_option("--lr", cfg.train.lr, "initial learning rate");
  cmd->add_option("--momentum", cfg.train.momentum, "SGD momentum");
  cmd->add_option("--weight-decay", cfg.train.weight_decay, "L2 decay");
  cmd->add_option("--lr-drop-every", cfg.train.lr_drop_every, "epochs between x lr_drop_factor drops");
  cmd->add_option("--lr-drop-factor", cfg.train.lr_drop_factor, "learning-rate drop factor");
  cmd->add_option("--k", cfg.train.k, "number of DFVs");
  cmd->add_option("--beta", cfg.train.beta, "RBF smoothing");
  cmd->add_option("--label-fraction", cfg.train.label_fraction, "labeled fraction per class");
  cmd->add_option("--transfer-weight", cfg.train.transfer_weight, "transfer loss weight (0 = scratch)");
  cmd->add_flag("--augment,!--no-augment", cfg.train.augment, "train-set augmentation");
  cmd->add_option("--clip-mode",
                  [&cfg](const std::vector<std::string>& v) {
                    cfg.train.clip_mode = svdd::training::clip_mode_from_string(v[0]);
                    return true;
                  },
                  "literal | inverted | off");
  cmd->add_option("--mechanism",
                  [&cfg](const std::vector<std::string>& v) {
                    cfg.train.mechanism = svdd::training::mechanism_from_string(v[0]);
                    return true;
                  },
                  "one_stage | two_stage");
}

ExperimentConfig resolve(const CLI::App* cmd, ExperimentConfig flags, const std::string& config_file) {
  ExperimentConfig cfg = flags;
  if (!config_file.empty()) {
    cfg = ExperimentConfig::load(config_file);
    // Re-apply any flag the user passed explicitly on top of the file.
    ExperimentConfig defaults;
    auto passed = [cmd](const std::string& name) { return cmd->count(name) > 0; };
    if (passed("--run-id")) cfg.run_id = flags.run_id;
    if (passed("--out")) cfg.out_dir = flags.out_dir;
    if (passed("--dataset")) cfg.dataset = flags.dataset;
    if (passed("--data-root")) cfg.data_root = flags.data_root;
    if (passed("--synthetic-classes")) cfg.synthetic_classes = flags.synthetic_classes;
    if (passed("--synthetic-per-class")) cfg.synthetic_per_class = flags.synthetic_per_class;
    if (passed("--synthetic-test-per-class")) cfg.synthetic_test_per_class = flags.synthetic_test_per_class;
    if (passed("--teacher")) cfg.teacher_model = flags.teacher_model;
    if (passed("--student")) cfg.student_model = flags.student_model;
    if (passed("--seed")) cfg.train.seed = flags.train.seed;
    if (passed("--epochs")) cfg.train.epochs = flags.train.epochs;
    if (passed("--batch-size")) cfg.train.batch_size = flags.train.batch_size;
    if (passed("--lr")) cfg.train.lr = flags.train.lr;
    if (passed("--momentum")) cfg.train.momentum = flags.train.momentum;
    if (passed("--weight-decay")) cfg.train.weight_decay = flags.train.weight_decay;
    if (passed("--lr-drop-every")) cfg.train.lr_drop_every = flags.train.lr_drop_every;
    if (passed("--lr-drop-factor")) cfg.train.lr_drop_factor = flags.train.lr_drop_factor;
    if (passed("--k")) cfg.train.k = flags.train.k;
    if (passed("--beta")) cfg.train.beta = flags.train.beta;
    if (passed("--label-fraction")) cfg.train.label_fraction = flags.train.label_fraction;
    if (passed("--transfer-weight")) cfg.train.transfer_weight = flags.train.transfer_weight;
    if (passed("--augment") || passed("--no-augment")) cfg.train.augment = flags.train.augment;
    if (passed("--clip-mode")) cfg.train.clip_mode = flags.train.clip_mode;
    if (passed("--mechanism")) cfg.train.mechanism = flags.train.mechanism;
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SVD-based knowledge distillation experiments"};
  app.require_subcommand(1);

  ExperimentConfig cfg;
  std::string config_file;
  std::string teacher_ckpt;
  std::string eval_ckpt;
  std::string eval_model = "tiny-vgg-S";
  std::vector<int> k_list;
  bool sweep_parallel = false;
  std::string inject_fault;

  auto* cmd_teacher = app.add_subcommand("train-teacher", "train and checkpoint a teacher network");
  add_common_options(cmd_teacher, cfg, config_file);

  auto* cmd_distill = app.add_subcommand("distill", "train a student against a frozen teacher");
  add_common_options(cmd_distill, cfg, config_file);
  cmd_distill->add_option("--teacher-checkpoint", teacher_ckpt, "teacher checkpoint path");

  auto* cmd_sweep = app.add_subcommand("sweep-k", "distill across a list of DFV counts");
  add_common_options(cmd_sweep, cfg, config_file);
  cmd_sweep->add_option("--teacher-checkpoint", teacher_ckpt, "teacher checkpoint path");
  cmd_sweep->add_option("--k-list", k_list, "DFV counts to sweep")->required();
  cmd_sweep->add_flag("--parallel", sweep_parallel, "run sweep entries concurrently");

  auto* cmd_verify = app.add_subcommand("verify", "run the numerical verification suites");
  cmd_verify->add_option("--inject-fault", inject_fault,
                         "test hook: 'svd-backward-sign' flips the analytic SVD gradient");

  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on the test set");
  add_common_options(cmd_eval, cfg, config_file);
  cmd_eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  cmd_eval->add_option("--model", eval_model, "preset the checkpoint belongs to");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_teacher->parsed()) {
      const auto resolved = resolve(cmd_teacher, cfg, config_file);
      const auto out = svdd::runner::train_teacher(resolved);
      std::printf("teacher: final test accuracy %.4f\n", out.result.final_test_acc);
      std::printf("checkpoint: %s\nmetrics: %s\n", out.checkpoint_path.c_str(), out.metrics_path.c_str());
      return 0;
    }
    if (cmd_distill->parsed()) {
      auto resolved = resolve(cmd_distill, cfg, config_file);
      if (!teacher_ckpt.empty()) resolved.teacher_checkpoint = teacher_ckpt;
      const auto out = svdd::runner::distill(resolved);
      std::printf("student (%s, %s): final test accuracy %.4f, final transfer loss %.6g\n",
                  resolved.student_model.c_str(), svdd::training::to_string(resolved.train.mechanism).c_str(),
                  out.result.final_test_acc, out.result.final_transfer_loss);
      std::printf("checkpoint: %s\nmetrics: %s\n", out.checkpoint_path.c_str(), out.metrics_path.c_str());
      return 0;
    }
    if (cmd_sweep->parsed()) {
      auto resolved = resolve(cmd_sweep, cfg, config_file);
      if (!teacher_ckpt.empty()) resolved.teacher_checkpoint = teacher_ckpt;
      const auto rows = svdd::runner::sweep_k(resolved, k_list, sweep_parallel);
      fs::create_directories(resolved.out_dir);
      const std::string summary = (fs::path(resolved.out_dir) / "summary.csv").string();
      svdd::runner::write_sweep_csv(summary, rows);
      for (const auto& r : rows) {
        std::printf("k=%d %-6s acc=%.4f transfer=%.6g %s\n", r.k, r.variant.c_str(), r.final_test_acc,
                    r.final_transfer_loss, r.status.c_str());
      }
      std::printf("summary: %s\n", summary.c_str());
      return 0;
    }
    if (cmd_verify->parsed()) {
      svdd::verify::FaultInjection fault;
      if (inject_fault == "svd-backward-sign") {
        fault.svd_backward_sign = true;
      } else if (!inject_fault.empty()) {
        std::fprintf(stderr, "unknown fault: %s\n", inject_fault.c_str());
        return 1;
      }
      const auto results = svdd::verify::run_all(fault);
      for (const auto& r : results) {
        std::printf("[%s] %s  worst=%.3g  %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.worst,
                    r.detail.c_str());
      }
      return svdd::verify::exit_code(results);
    }
    if (cmd_eval->parsed()) {
      const auto resolved = resolve(cmd_eval, cfg, config_file);
      const auto ev = svdd::runner::eval_checkpoint(resolved, eval_ckpt, eval_model);
      std::printf("test accuracy %.4f, test loss %.6g\n", ev.accuracy, ev.loss);
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
