#include "svdd/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace svdd::config {
namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string ExperimentConfig::serialize() const {
  // Keys are emitted sorted so identical configs serialize byte-identically.
  std::map<std::string, std::string> kv;
  kv["svdd_config_version"] = std::to_string(kConfigVersion);
  kv["run.id"] = run_id;
  kv["run.out_dir"] = out_dir;
  kv["data.kind"] = dataset;
  kv["data.root"] = data_root;
  kv["data.synthetic_classes"] = std::to_string(synthetic_classes);
  kv["data.synthetic_per_class"] = std::to_string(synthetic_per_class);
  kv["data.synthetic_test_per_class"] = std::to_string(synthetic_test_per_class);
  kv["model.teacher"] = teacher_model;
  kv["model.student"] = student_model;
  kv["model.teacher_checkpoint"] = teacher_checkpoint;
  kv["train.mechanism"] = training::to_string(train.mechanism);
  kv["train.k"] = std::to_string(train.k);
  kv["train.beta"] = fmt_double(train.beta);
  kv["train.lr"] = fmt_double(train.lr);
  kv["train.momentum"] = fmt_double(train.momentum);
  kv["train.weight_decay"] = fmt_double(train.weight_decay);
  kv["train.batch_size"] = std::to_string(train.batch_size);
  kv["train.epochs"] = std::to_string(train.epochs);
  kv["train.lr_drop_every"] = std::to_string(train.lr_drop_every);
  kv["train.lr_drop_factor"] = fmt_double(train.lr_drop_factor);
  kv["train.label_fraction"] = fmt_double(train.label_fraction);
  kv["train.clip_mode"] = training::to_string(train.clip_mode);
  kv["train.transfer_weight"] = fmt_double(train.transfer_weight);
  kv["train.augment"] = train.augment ? "true" : "false";
  kv["train.aug.max_shift"] = std::to_string(train.aug.max_shift);
  kv["train.aug.max_rot_deg"] = fmt_double(train.aug.max_rot_deg);
  kv["train.aug.flip_prob"] = fmt_double(train.aug.flip_prob);
  kv["train.seed"] = std::to_string(train.seed);
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
  return os.str();
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(line_no) + " is not `key = value`: " + t);
    }
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  ExperimentConfig c;
  auto get = [&kv](const std::string& key, auto&& apply) {
    auto it = kv.find(key);
    if (it != kv.end()) apply(it->second);
    kv.erase(key);
  };
  get("svdd_config_version", [](const std::string& v) {
    if (std::stoi(v) != kConfigVersion) {
      throw std::invalid_argument("config: unsupported version " + v);
    }
  });
  get("run.id", [&](const std::string& v) { c.run_id = v; });
  get("run.out_dir", [&](const std::string& v) { c.out_dir = v; });
  get("data.kind", [&](const std::string& v) { c.dataset = v; });
  get("data.root", [&](const std::string& v) { c.data_root = v; });
  get("data.synthetic_classes", [&](const std::string& v) { c.synthetic_classes = std::stoi(v); });
  get("data.synthetic_per_class", [&](const std::string& v) { c.synthetic_per_class = std::stoi(v); });
  get("data.synthetic_test_per_class",
      [&](const std::string& v) { c.synthetic_test_per_class = std::stoi(v); });
  get("model.teacher", [&](const std::string& v) { c.teacher_model = v; });
  get("model.student", [&](const std::string& v) { c.student_model = v; });
  get("model.teacher_checkpoint", [&](const std::string& v) { c.teacher_checkpoint = v; });
  get("train.mechanism", [&](const std::string& v) { c.train.mechanism = training::mechanism_from_string(v); });
  get("train.k", [&](const std::string& v) { c.train.k = std::stoi(v); });
  get("train.beta", [&](const std::string& v) { c.train.beta = std::stod(v); });
  get("train.lr", [&](const std::string& v) { c.train.lr = std::stod(v); });
  get("train.momentum", [&](const std::string& v) { c.train.momentum = std::stod(v); });
  get("train.weight_decay", [&](const std::string& v) { c.train.weight_decay = std::stod(v); });
  get("train.batch_size", [&](const std::string& v) { c.train.batch_size = std::stoi(v); });
  get("train.epochs", [&](const std::string& v) { c.train.epochs = std::stoi(v); });
  get("train.lr_drop_every", [&](const std::string& v) { c.train.lr_drop_every = std::stoi(v); });
  get("train.lr_drop_factor", [&](const std::string& v) { c.train.lr_drop_factor = std::stod(v); });
  get("train.label_fraction", [&](const std::string& v) { c.train.label_fraction = std::stod(v); });
  get("train.clip_mode", [&](const std::string& v) { c.train.clip_mode = training::clip_mode_from_string(v); });
  get("train.transfer_weight", [&](const std::string& v) { c.train.transfer_weight = std::stod(v); });
  get("train.augment", [&](const std::string& v) { c.train.augment = (v == "true" || v == "1"); });
  get("train.aug.max_shift", [&](const std::string& v) { c.train.aug.max_shift = std::stoi(v); });
  get("train.aug.max_rot_deg", [&](const std::string& v) { c.train.aug.max_rot_deg = std::stod(v); });
  get("train.aug.flip_prob", [&](const std::string& v) { c.train.aug.flip_prob = std::stod(v); });
  get("train.seed", [&](const std::string& v) { c.train.seed = std::stoull(v); });
  if (!kv.empty()) {
    throw std::invalid_argument("config: unknown key: " + kv.begin()->first);
  }
  return c;
}

void ExperimentConfig::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("config: cannot write " + path);
  const std::string s = serialize();
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

void ExperimentConfig::validate() const {
  if (dataset != "synthetic" && dataset != "cifar10" && dataset != "cifar100") {
    throw std::invalid_argument("config: unknown dataset kind: " + dataset);
  }
  if (train.k < 1) throw std::invalid_argument("config: k must be >= 1");
  if (train.beta <= 0.0) throw std::invalid_argument("config: beta must be > 0");
  if (train.label_fraction <= 0.0 || train.label_fraction > 1.0) {
    throw std::invalid_argument("config: label_fraction must be in (0, 1]");
  }
  if (train.epochs < 1 || train.batch_size < 1) {
    throw std::invalid_argument("config: epochs and batch_size must be >= 1");
  }
  if (train.transfer_weight < 0.0) {
    throw std::invalid_argument("config: transfer_weight must be >= 0");
  }
}

}  // namespace svdd::config
