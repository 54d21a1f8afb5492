#include "svdd/runner.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <stdexcept>

#include "svdd/models.hpp"
#include "svdd/rng.hpp"

namespace svdd::runner {
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTrainDataSalt = 0xD474;
constexpr std::uint64_t kTestDataSalt = 0xD475;
constexpr std::uint64_t kLabelSalt = 0x5AB5;
constexpr std::uint64_t kTeacherInitSalt = 0x7EAC;
constexpr std::uint64_t kStudentInitSalt = 0x57D0;

std::string resolve_data_root(const config::ExperimentConfig& cfg) {
  if (!cfg.data_root.empty()) return cfg.data_root;
  if (const char* env = std::getenv("SVDD_DATA_ROOT")) return env;
  throw std::invalid_argument("dataset root not set: pass data.root or set SVDD_DATA_ROOT");
}

void prepare_run_dir(const config::ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  cfg.save((fs::path(cfg.out_dir) / "config.txt").string());
}

}  // namespace

std::pair<data::Dataset, data::Dataset> load_datasets(const config::ExperimentConfig& cfg) {
  cfg.validate();
  data::Dataset train, test;
  if (cfg.dataset == "synthetic") {
    train = data::synthetic_dataset(cfg.synthetic_classes, cfg.synthetic_per_class,
                                    Rng::mix(cfg.train.seed, kTrainDataSalt));
    test = data::synthetic_dataset(cfg.synthetic_classes, cfg.synthetic_test_per_class,
                                   Rng::mix(cfg.train.seed, kTestDataSalt));
  } else {
    auto [tr, te] = data::load_cifar(resolve_data_root(cfg));
    train = std::move(tr);
    test = std::move(te);
  }
  train = data::subset_labels(train, cfg.train.label_fraction, Rng::mix(cfg.train.seed, kLabelSalt));
  return {std::move(train), std::move(test)};
}

RunOutput train_teacher(const config::ExperimentConfig& cfg) {
  prepare_run_dir(cfg);
  auto [train, test] = load_datasets(cfg);
  models::Model teacher(models::preset(cfg.teacher_model, train.classes),
                        Rng::mix(cfg.train.seed, kTeacherInitSalt));
  RunOutput out;
  out.config_path = (fs::path(cfg.out_dir) / "config.txt").string();
  out.metrics_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
  out.checkpoint_path = (fs::path(cfg.out_dir) / "teacher.ckpt").string();
  training::MetricsWriter writer(out.metrics_path);
  out.result = training::train_plain(teacher, cfg.train, train, test, &writer);
  teacher.save(out.checkpoint_path);
  return out;
}

RunOutput distill(const config::ExperimentConfig& cfg) {
  prepare_run_dir(cfg);
  auto [train, test] = load_datasets(cfg);
  models::Model student(models::preset(cfg.student_model, train.classes),
                        Rng::mix(cfg.train.seed, kStudentInitSalt));
  RunOutput out;
  out.config_path = (fs::path(cfg.out_dir) / "config.txt").string();
  out.metrics_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
  out.checkpoint_path = (fs::path(cfg.out_dir) / "student.ckpt").string();
  training::MetricsWriter writer(out.metrics_path);

  if (cfg.teacher_checkpoint.empty()) {
    if (cfg.train.transfer_weight != 0.0) {
      throw std::invalid_argument("distill: teacher checkpoint required unless transfer_weight is 0");
    }
    out.result = training::train_plain(student, cfg.train, train, test, &writer);
  } else {
    models::Model teacher(models::preset(cfg.teacher_model, train.classes), 0);
    teacher.load(cfg.teacher_checkpoint);
    teacher.set_trainable(false);
    out.result = cfg.train.mechanism == training::Mechanism::kOneStage
                     ? training::run_one_stage(teacher, student, cfg.train, train, test, &writer)
                     : training::run_two_stage(teacher, student, cfg.train, train, test, &writer);
  }
  student.save(out.checkpoint_path);
  return out;
}

training::EvalResult eval_checkpoint(const config::ExperimentConfig& cfg, const std::string& checkpoint,
                                     const std::string& model_name) {
  auto [train, test] = load_datasets(cfg);
  models::Model m(models::preset(model_name, test.classes), 0);
  m.load(checkpoint);
  return training::evaluate(m, test, data::channel_means(train), cfg.train.batch_size);
}

std::vector<SweepRow> sweep_k(const config::ExperimentConfig& cfg, std::vector<int> k_list,
                              bool parallel) {
  std::sort(k_list.begin(), k_list.end());
  k_list.erase(std::unique(k_list.begin(), k_list.end()), k_list.end());
  struct Job {
    int k;
    std::string variant;
    std::string model;
  };
  std::vector<Job> jobs;
  for (int k : k_list) {
    jobs.push_back({k, "pool", "tiny-vgg-S"});
    jobs.push_back({k, "stride", "tiny-vgg-S-stride"});
  }
  auto run_job = [&cfg](const Job& job) {
    SweepRow row;
    row.k = job.k;
    row.variant = job.variant;
    try {
      config::ExperimentConfig sub = cfg;
      sub.train.k = job.k;
      sub.student_model = job.model;
      sub.run_id = cfg.run_id + "-k" + std::to_string(job.k) + "-" + job.variant;
      sub.out_dir = (fs::path(cfg.out_dir) / ("k" + std::to_string(job.k) + "_" + job.variant)).string();
      const auto out = distill(sub);
      row.final_test_acc = out.result.final_test_acc;
      row.final_transfer_loss = out.result.final_transfer_loss;
    } catch (const std::exception& e) {
      row.status = std::string("failed: ") + e.what();
    }
    return row;
  };
  std::vector<SweepRow> rows;
  if (parallel) {
    std::vector<std::future<SweepRow>> futures;
    futures.reserve(jobs.size());
    for (const auto& job : jobs) {
      futures.push_back(std::async(std::launch::async, run_job, job));
    }
    for (auto& f : futures) rows.push_back(f.get());
  } else {
    for (const auto& job : jobs) rows.push_back(run_job(job));
  }
  return rows;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("sweep: cannot write " + path);
  os << "k,variant,final_test_acc,final_transfer_loss,status\n";
  for (const auto& r : rows) {
    char line[256];
    std::snprintf(line, sizeof(line), "%d,%s,%.9g,%.9g,", r.k, r.variant.c_str(), r.final_test_acc,
                  r.final_transfer_loss);
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    os << line << status << "\n";
  }
}

}  // namespace svdd::runner
