#include "svdd/training.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "svdd/distill_ops.hpp"
#include "svdd/ops.hpp"
#include "svdd/rng.hpp"
#include "svdd/sgd.hpp"

namespace svdd::training {

using autograd::Graph;
using autograd::Tensor;

std::string to_string(Mechanism m) { return m == Mechanism::kOneStage ? "one_stage" : "two_stage"; }

std::string to_string(ClipMode m) {
  switch (m) {
    case ClipMode::kLiteral: return "literal";
    case ClipMode::kInverted: return "inverted";
    default: return "off";
  }
}

Mechanism mechanism_from_string(const std::string& s) {
  if (s == "one_stage") return Mechanism::kOneStage;
  if (s == "two_stage") return Mechanism::kTwoStage;
  throw std::invalid_argument("unknown mechanism: " + s);
}

ClipMode clip_mode_from_string(const std::string& s) {
  if (s == "literal") return ClipMode::kLiteral;
  if (s == "inverted") return ClipMode::kInverted;
  if (s == "off") return ClipMode::kOff;
  throw std::invalid_argument("unknown clip mode: " + s);
}

MetricsWriter::MetricsWriter(std::string path) : path_(std::move(path)) {
  buffer_ = "epoch,stage,lr,main_loss,transfer_loss,clip_factor_mean,train_acc,test_acc,unlabeled_count\n";
  flush();
}

void MetricsWriter::append(const EpochMetrics& m) {
  char line[256];
  std::snprintf(line, sizeof(line), "%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%lld\n", m.epoch, m.stage,
                m.lr, m.main_loss, m.transfer_loss, m.clip_factor_mean, m.train_acc, m.test_acc,
                static_cast<long long>(m.unlabeled));
  buffer_ += line;
  flush();
}

void MetricsWriter::flush() {
  std::ofstream os(path_, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("metrics: cannot write " + path_);
  os.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
}

double transfer_loss(const std::vector<distill::Dfv>& teacher, const std::vector<distill::Dfv>& student) {
  if (teacher.size() != student.size()) {
    throw std::invalid_argument("transfer_loss: group counts differ: " + std::to_string(teacher.size()) +
                                " vs " + std::to_string(student.size()));
  }
  double total = 0.0;
  for (std::size_t g = 0; g < teacher.size(); ++g) {
    const auto& t = teacher[g];
    const auto& s = student[g];
    if (t.k != s.k || t.d_front != s.d_front || t.d_back != s.d_back) {
      throw std::invalid_argument("transfer_loss: DFV shape mismatch at group " + std::to_string(g + 1));
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      const double d = t.values[i] - s.values[i];
      sq += d * d;
    }
    total += sq / 2.0;
  }
  return total;
}

double total_loss(double main, double transfer) {
  if (!std::isfinite(main) || !std::isfinite(transfer)) {
    throw std::runtime_error("total_loss: non-finite loss (main=" + std::to_string(main) +
                             ", transfer=" + std::to_string(transfer) + ")");
  }
  return main + transfer;
}

namespace {

double l2_of(const std::vector<std::vector<float>>& grads) {
  double ss = 0.0;
  for (const auto& g : grads) {
    for (float v : g) ss += static_cast<double>(v) * v;
  }
  return std::sqrt(ss);
}

double stable_sigmoid(double x) {
  double s;
  if (x >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    s = e / (1.0 + e);
  }
  return std::max(s, 1e-300);  // keep the factor inside (0, 1]
}

}  // namespace

ClipDecision clip_transfer_gradient(const std::vector<std::vector<float>>& grad_main,
                                    std::vector<std::vector<float>>& grad_trans, int epoch,
                                    ClipMode mode) {
  if (grad_main.size() != grad_trans.size()) {
    throw std::invalid_argument("clip_transfer_gradient: parameter sets differ in size");
  }
  ClipDecision d;
  const double norm_main = l2_of(grad_main);
  const double norm_trans = l2_of(grad_trans);
  if (norm_trans == 0.0) {
    d.tau = std::numeric_limits<double>::infinity();
    return d;  // pass-through
  }
  d.tau = norm_main / norm_trans;
  bool apply = false;
  switch (mode) {
    case ClipMode::kLiteral: apply = norm_trans < norm_main; break;
    case ClipMode::kInverted: apply = !(norm_trans < norm_main); break;
    case ClipMode::kOff: apply = false; break;
  }
  if (!apply) return d;
  d.scaled = true;
  d.factor = stable_sigmoid(d.tau - static_cast<double>(epoch));
  const float f = static_cast<float>(d.factor);
  for (auto& g : grad_trans) {
    for (auto& v : g) v *= f;
  }
  return d;
}

namespace {

enum class StepMode { kMainOnly, kTransferOnly, kBoth };

distill::FeatureMapView sample_view(const Tensor& tap, std::int64_t n) {
  // tap: [N x h x w x d]; view of one sample's map.
  const auto& s = tap.shape();
  const std::int64_t sz = s[1] * s[2] * s[3];
  return distill::FeatureMapView{tap.value().data() + n * sz, s[1], s[2], s[3]};
}

struct TeacherTapData {
  distill::TeacherTapRef ref;
  Tensor dfv_const;  // [k x D_F x D_B], no grad
};

// Per-(sample, tap) teacher products; usable only when inputs are
// deterministic per index (no augmentation).
struct TeacherCache {
  bool enabled = false;
  std::vector<std::vector<std::optional<TeacherTapData>>> entries;  // [sample][tap]
};

Tensor dfv_to_tensor(const distill::Dfv& dfv) {
  std::vector<float> v(dfv.values.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(dfv.values[i]);
  return Tensor::leaf({dfv.k, dfv.d_front, dfv.d_back}, std::move(v), false);
}

class DistillRunner {
 public:
  DistillRunner(const models::Model* teacher, models::Model& student, const TrainConfig& cfg,
                const data::Dataset& train, const data::Dataset& test, MetricsWriter* writer)
      : teacher_(teacher), student_(student), cfg_(cfg), train_(train), test_(test), writer_(writer) {
    means_ = data::channel_means(train_);
    unlabeled_ = 0;
    for (auto m : train_.labeled_mask) unlabeled_ += m ? 0 : 1;
    cache_.enabled = teacher_ && !cfg_.augment && cfg_.transfer_weight > 0.0;
    if (cache_.enabled) {
      cache_.entries.resize(static_cast<std::size_t>(train_.n));
    }
    if (teacher_ && cfg_.transfer_weight > 0.0) check_tap_compatibility();
  }

  RunResult run(StepMode mode, int stage, int epochs, int* global_epoch) {
    autograd::SgdOptimizer opt(student_.parameters(),
                               {cfg_.momentum, true, cfg_.weight_decay});
    RunResult result;
    for (int e = 0; e < epochs; ++e, ++(*global_epoch)) {
      const double lr = cfg_.lr * std::pow(cfg_.lr_drop_factor, e / std::max(1, cfg_.lr_drop_every));
      EpochMetrics em = run_epoch(opt, mode, lr, e, *global_epoch);
      em.stage = stage;
      em.epoch = *global_epoch;
      const auto ev = evaluate(student_, test_, means_, cfg_.batch_size);
      em.test_acc = ev.accuracy;
      em.unlabeled = unlabeled_;
      if (writer_) writer_->append(em);
      result.history.push_back(em);
      result.final_test_acc = em.test_acc;
      result.final_transfer_loss = em.transfer_loss;
    }
    return result;
  }

 private:
  void check_tap_compatibility() {
    // Abort before training on any tap shape problem, using a one-sample probe.
    Graph g;
    std::vector<std::int64_t> probe = {0};
    Rng no_rng(0);
    Tensor batch = data::make_batch(train_, probe, means_, nullptr, &no_rng);
    std::vector<models::LayerTap> t_taps, s_taps;
    teacher_->forward(g, batch, &t_taps);
    student_.forward(g, batch, &s_taps);
    if (t_taps.size() != s_taps.size()) {
      throw std::invalid_argument("distill: teacher has " + std::to_string(t_taps.size()) +
                                  " taps, student has " + std::to_string(s_taps.size()));
    }
    for (std::size_t t = 0; t < t_taps.size(); ++t) {
      const auto& tf = t_taps[t].ffm.shape();
      const auto& sf = s_taps[t].ffm.shape();
      const auto& tb = t_taps[t].bfm.shape();
      const auto& sb = s_taps[t].bfm.shape();
      if (tf[3] != sf[3] || tb[3] != sb[3]) {
        throw std::invalid_argument("distill: tap " + std::to_string(t + 1) + " channel depths differ: teacher " +
                                    autograd::shape_str(tf) + "/" + autograd::shape_str(tb) + " vs student " +
                                    autograd::shape_str(sf) + "/" + autograd::shape_str(sb));
      }
      for (const auto* side : {&sf, &sb}) {
        const auto& s = *side;
        if (cfg_.k + 1 > std::min(s[1] * s[2], s[3])) {
          throw std::invalid_argument("distill: rank k+1 = " + std::to_string(cfg_.k + 1) +
                                      " exceeds min(H*W, D) for student tap " + std::to_string(t + 1) +
                                      " of shape " + autograd::shape_str(s));
        }
      }
      for (const auto* side : {&tf, &tb}) {
        const auto& s = *side;
        if (cfg_.k > std::min(s[1] * s[2], s[3])) {
          throw std::invalid_argument("distill: rank k = " + std::to_string(cfg_.k) +
                                      " exceeds min(H*W, D) for teacher tap " + std::to_string(t + 1) +
                                      " of shape " + autograd::shape_str(s));
        }
      }
    }
  }

  // Teacher DFVs and alignment references for each sample of the batch.
  std::vector<std::vector<TeacherTapData>> teacher_tap_data(const Tensor& batch,
                                                            const std::vector<std::int64_t>& indices) {
    const std::int64_t n = batch.shape()[0];
    std::vector<std::vector<TeacherTapData>> out(static_cast<std::size_t>(n));
    std::vector<std::int64_t> missing;
    if (cache_.enabled) {
      for (std::int64_t i = 0; i < n; ++i) {
        if (cache_.entries[indices[i]].empty()) missing.push_back(i);
      }
    }
    const bool need_forward = !cache_.enabled || !missing.empty();
    std::vector<models::LayerTap> taps;
    if (need_forward) {
      autograd::NoGradGuard no_grad;
      Graph g;
      teacher_->forward(g, batch, &taps);
    }
    for (std::int64_t i = 0; i < n; ++i) {
      if (cache_.enabled && !cache_.entries[indices[i]].empty()) {
        auto& cached = cache_.entries[indices[i]];
        for (auto& c : cached) out[i].push_back(*c);
        continue;
      }
      out[i].resize(taps.size());
      for (std::size_t t = 0; t < taps.size(); ++t) {
        TeacherTapData data;
        const auto dfv = distill::distill_teacher_tap(sample_view(taps[t].ffm, i), sample_view(taps[t].bfm, i),
                                                      cfg_.k, cfg_.beta, &data.ref);
        data.dfv_const = dfv_to_tensor(dfv);
        out[i][t] = std::move(data);
      }
      if (cache_.enabled) {
        auto& slot = cache_.entries[indices[i]];
        slot.resize(out[i].size());
        for (std::size_t t = 0; t < out[i].size(); ++t) slot[t] = out[i][t];
      }
    }
    return out;
  }

  struct StepStats {
    double main = 0.0, transfer = 0.0, clip = 1.0;
    int correct = 0;
    bool transfer_measured = false;
  };

  StepStats step(autograd::SgdOptimizer& opt, StepMode mode, double lr, int p,
                 const std::vector<std::int64_t>& indices, Rng* aug_rng, bool measure_transfer) {
    Graph g;
    const data::AugmentConfig* aug = cfg_.augment ? &cfg_.aug : nullptr;
    Tensor batch = data::make_batch(train_, indices, means_, aug, aug_rng);
    const std::vector<int> labels = data::batch_labels(train_, indices);

    const bool has_transfer = teacher_ != nullptr && cfg_.transfer_weight > 0.0 && measure_transfer;
    // The differentiable path is only built when the transfer gradient is
    // wanted; a main-only stage still measures the loss (knowledge drift)
    // through the pure path.
    const bool transfer_grad = has_transfer && mode != StepMode::kMainOnly;

    std::vector<models::LayerTap> taps;
    Tensor logits = student_.forward(g, batch, has_transfer ? &taps : nullptr);
    Tensor main_node = autograd::softmax_cross_entropy(g, logits, labels);

    StepStats st;
    Tensor transfer_node;
    if (transfer_grad) {
      const auto teacher_data = teacher_tap_data(batch, indices);
      Tensor acc;
      const std::int64_t n = batch.shape()[0];
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < taps.size(); ++t) {
          Tensor ffm = autograd::slice_batch(g, taps[t].ffm, i);
          Tensor bfm = autograd::slice_batch(g, taps[t].bfm, i);
          Tensor sdfv = distill::student_dfv(g, ffm, bfm, cfg_.k, cfg_.beta, teacher_data[i][t].ref);
          Tensor diff = autograd::sub(g, teacher_data[i][t].dfv_const, sdfv);
          Tensor nrm = autograd::l2_norm(g, diff);
          Tensor half_sq = autograd::scale(g, autograd::mul(g, nrm, nrm), 0.5);
          acc = acc.valid() ? autograd::add(g, acc, half_sq) : half_sq;
        }
      }
      transfer_node = autograd::scale(g, acc, cfg_.transfer_weight / static_cast<double>(n));
      st.transfer = transfer_node.item();
    } else if (has_transfer) {
      const auto teacher_data = teacher_tap_data(batch, indices);
      const std::int64_t n = batch.shape()[0];
      double sum = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < taps.size(); ++t) {
          const auto sdfv = distill::distill_student_tap(sample_view(taps[t].ffm, i), sample_view(taps[t].bfm, i),
                                                         cfg_.k, cfg_.beta, teacher_data[i][t].ref);
          const auto& tv = teacher_data[i][t].dfv_const.value();
          double sq = 0.0;
          for (std::size_t e = 0; e < sdfv.values.size(); ++e) {
            const double d = tv[e] - sdfv.values[e];
            sq += d * d;
          }
          sum += sq / 2.0;
        }
      }
      st.transfer = cfg_.transfer_weight * sum / static_cast<double>(n);
    }
    st.transfer_measured = has_transfer;

    total_loss(st.main, st.transfer);  // aborts the run on NaN with diagnostics

    const auto& lv = logits.value();
    const std::int64_t classes = logits.shape()[1];
    for (std::size_t i = 0; i < indices.size(); ++i) {
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < classes; ++c) {
        if (lv[i * classes + c] > lv[i * classes + best]) best = c;
      }
      if (best == train_.labels[indices[i]]) ++st.correct;
    }

    auto params = student_.parameters();
    opt.zero_grad();
    switch (mode) {
      case StepMode::kMainOnly:
        g.backward(main_node);
        break;
      case StepMode::kTransferOnly:
        if (transfer_node.valid()) g.backward(transfer_node);
        break;
      case StepMode::kBoth: {
        // Separate backward passes feed the adaptive clipping ratio.
        g.backward(main_node);
        std::vector<std::vector<float>> grad_main;
        grad_main.reserve(params.size());
        for (auto& prm : params) {
          prm.ensure_grad();
          grad_main.push_back(prm.grad());
        }
        opt.zero_grad();
        std::vector<std::vector<float>> grad_trans(params.size());
        if (transfer_node.valid()) {
          g.backward(transfer_node);
          for (std::size_t i = 0; i < params.size(); ++i) grad_trans[i] = params[i].grad();
        } else {
          for (std::size_t i = 0; i < params.size(); ++i) {
            grad_trans[i].assign(params[i].grad().size(), 0.0f);
          }
        }
        const auto decision = clip_transfer_gradient(grad_main, grad_trans, p, cfg_.clip_mode);
        st.clip = decision.factor;
        for (std::size_t i = 0; i < params.size(); ++i) {
          auto& dst = params[i].grad();
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = grad_main[i][j] + grad_trans[i][j];
        }
        break;
      }
    }
    opt.step(lr);
    return st;
  }

  EpochMetrics run_epoch(autograd::SgdOptimizer& opt, StepMode mode, double lr, int p,
                         int global_epoch) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(train_.n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(Rng::mix(cfg_.seed, 0xE70C0000ULL + static_cast<std::uint64_t>(global_epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    Rng aug_rng(Rng::mix(cfg_.seed, 0xA0600000ULL + static_cast<std::uint64_t>(global_epoch)));

    EpochMetrics em;
    em.lr = lr;
    double main_sum = 0.0, trans_sum = 0.0, clip_sum = 0.0;
    std::int64_t correct = 0;
    int steps = 0, measured = 0;
    // Main-only stages sample the transfer metric on a fixed budget of
    // shuffled batches per epoch; it is not a training signal there.
    const int measure_cap =
        mode == StepMode::kMainOnly ? (255 + cfg_.batch_size) / cfg_.batch_size : INT_MAX;
    for (std::int64_t start = 0; start < train_.n; start += cfg_.batch_size) {
      const std::int64_t end = std::min<std::int64_t>(start + cfg_.batch_size, train_.n);
      std::vector<std::int64_t> idx(order.begin() + start, order.begin() + end);
      const auto st = step(opt, mode, lr, p, idx, &aug_rng, steps < measure_cap);
      main_sum += st.main;
      if (st.transfer_measured) {
        trans_sum += st.transfer;
        ++measured;
      }
      clip_sum += st.clip;
      correct += st.correct;
      ++steps;
    }
    em.main_loss = main_sum / steps;
    em.transfer_loss = measured > 0 ? trans_sum / measured : 0.0;
    em.clip_factor_mean = clip_sum / steps;
    em.train_acc = static_cast<double>(correct) / static_cast<double>(train_.n);
    return em;
  }

  const models::Model* teacher_;
  models::Model& student_;
  TrainConfig cfg_;
  const data::Dataset& train_;
  const data::Dataset& test_;
  MetricsWriter* writer_;
  std::vector<double> means_;
  std::int64_t unlabeled_ = 0;
  TeacherCache cache_;
};

}  // namespace

TransferProbe transfer_fixed_point_probe(const models::Model& teacher, models::Model& student,
                                         const data::Dataset& d, int batch_size, int k, double beta,
                                         std::uint64_t seed) {
  const auto means = data::channel_means(d);
  Rng rng(seed);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(std::min<std::int64_t>(batch_size, d.n)));
  for (auto& i : idx) i = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(d.n)));
  Rng no_rng(0);
  Graph g;
  Tensor batch = data::make_batch(d, idx, means, nullptr, &no_rng);

  std::vector<models::LayerTap> t_taps, s_taps;
  {
    Graph tg;
    teacher.forward(tg, batch, &t_taps);
  }
  Tensor logits = student.forward(g, batch, &s_taps);
  (void)logits;

  const std::int64_t n = batch.shape()[0];
  Tensor acc;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < t_taps.size(); ++t) {
      distill::TeacherTapRef ref;
      const auto tdfv = distill::distill_teacher_tap(sample_view(t_taps[t].ffm, i),
                                                     sample_view(t_taps[t].bfm, i), k, beta, &ref);
      Tensor ffm = autograd::slice_batch(g, s_taps[t].ffm, i);
      Tensor bfm = autograd::slice_batch(g, s_taps[t].bfm, i);
      Tensor sdfv = distill::student_dfv(g, ffm, bfm, k, beta, ref);
      Tensor diff = autograd::sub(g, dfv_to_tensor(tdfv), sdfv);
      Tensor nrm = autograd::l2_norm(g, diff);
      Tensor half_sq = autograd::scale(g, autograd::mul(g, nrm, nrm), 0.5);
      acc = acc.valid() ? autograd::add(g, acc, half_sq) : half_sq;
    }
  }
  Tensor transfer_node = autograd::scale(g, acc, 1.0 / static_cast<double>(n));
  TransferProbe probe;
  probe.loss = transfer_node.item();
  for (auto& p : student.parameters()) p.zero_grad();
  g.backward(transfer_node);
  double ss = 0.0;
  for (const auto& p : student.parameters()) {
    if (!p.has_grad()) continue;
    for (float v : p.grad()) ss += static_cast<double>(v) * v;
  }
  probe.grad_norm = std::sqrt(ss);
  return probe;
}

EvalResult evaluate(const models::Model& m, const data::Dataset& d, const std::vector<double>& means,
                    int batch_size) {
  EvalResult r;
  std::int64_t correct = 0, labeled = 0;
  double loss_sum = 0.0;
  Rng no_rng(0);
  autograd::NoGradGuard no_grad;
  for (std::int64_t start = 0; start < d.n; start += batch_size) {
    const std::int64_t end = std::min<std::int64_t>(start + batch_size, d.n);
    std::vector<std::int64_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Graph g;
    Tensor batch = data::make_batch(d, idx, means, nullptr, &no_rng);
    Tensor logits = m.forward(g, batch);
    const auto& lv = logits.value();
    const std::int64_t classes = logits.shape()[1];
    for (std::int64_t i = 0; i < end - start; ++i) {
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < classes; ++c) {
        if (lv[i * classes + c] > lv[i * classes + best]) best = c;
      }
      if (best == d.labels[start + i]) ++correct;
    }
    std::vector<int> labels(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = d.labels[idx[i]];
    Graph g2;
    loss_sum += autograd::softmax_cross_entropy(g2, logits, labels).item() * static_cast<double>(idx.size());
    labeled += static_cast<std::int64_t>(idx.size());
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(d.n);
  r.loss = loss_sum / static_cast<double>(labeled);
  return r;
}

RunResult train_plain(models::Model& m, const TrainConfig& cfg, const data::Dataset& train,
                      const data::Dataset& test, MetricsWriter* writer) {
  DistillRunner runner(nullptr, m, cfg, train, test, writer);
  int global_epoch = 0;
  return runner.run(StepMode::kMainOnly, 1, cfg.epochs, &global_epoch);
}

RunResult run_one_stage(const models::Model& teacher, models::Model& student, const TrainConfig& cfg,
                        const data::Dataset& train, const data::Dataset& test, MetricsWriter* writer) {
  DistillRunner runner(&teacher, student, cfg, train, test, writer);
  int global_epoch = 0;
  return runner.run(StepMode::kBoth, 1, cfg.epochs, &global_epoch);
}

RunResult run_two_stage(const models::Model& teacher, models::Model& student, const TrainConfig& cfg,
                        const data::Dataset& train, const data::Dataset& test, MetricsWriter* writer) {
  DistillRunner runner(&teacher, student, cfg, train, test, writer);
  int global_epoch = 0;
  RunResult stage1 = runner.run(StepMode::kTransferOnly, 1, cfg.epochs, &global_epoch);
  RunResult stage2 = runner.run(StepMode::kMainOnly, 2, cfg.epochs, &global_epoch);
  RunResult merged;
  merged.history = std::move(stage1.history);
  merged.history.insert(merged.history.end(), stage2.history.begin(), stage2.history.end());
  merged.final_test_acc = stage2.final_test_acc;
  merged.final_transfer_loss = stage2.final_transfer_loss;
  return merged;
}

}  // namespace svdd::training
