#include "svdd/models.hpp"

#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "svdd/checkpoint.hpp"
#include "svdd/rng.hpp"

namespace svdd::models {

using autograd::Graph;
using autograd::Padding;
using autograd::Shape;
using autograd::Tensor;

void ModelSpec::validate() const {
  if (blocks.empty()) throw std::invalid_argument("model spec: at least one block required");
  if (input_h < 1 || input_w < 1 || input_c < 1) {
    throw std::invalid_argument("model spec: input dims must be positive");
  }
  if (classes < 2) throw std::invalid_argument("model spec: need at least 2 classes");
  for (const auto& b : blocks) {
    if (b.channels < 1 || b.conv_count < 1) {
      throw std::invalid_argument("model spec: block channels and conv count must be >= 1");
    }
  }
  int prev_end = -1;
  for (const auto& t : taps) {
    if (t.ffm_block < 0 || t.bfm_block >= static_cast<int>(blocks.size()) || t.ffm_block > t.bfm_block) {
      throw std::invalid_argument("model spec: tap points must be valid ordered block boundaries");
    }
    if (t.ffm_block <= prev_end) {
      throw std::invalid_argument("model spec: taps must be non-overlapping and ordered");
    }
    prev_end = t.bfm_block;
  }
}

ModelSpec preset(const std::string& name, std::int64_t classes) {
  ModelSpec s;
  s.name = name;
  s.classes = classes;
  s.hidden = {64};
  s.taps = {{0, 0}, {1, 1}, {2, 2}};
  if (name == "tiny-vgg-T") {
    s.blocks = {{16, 2, Downsample::kMaxPool}, {32, 2, Downsample::kMaxPool}, {64, 2, Downsample::kMaxPool}};
  } else if (name == "tiny-vgg-S") {
    s.blocks = {{16, 1, Downsample::kMaxPool}, {32, 1, Downsample::kMaxPool}, {64, 1, Downsample::kMaxPool}};
  } else if (name == "tiny-vgg-S-stride") {
    s.blocks = {{16, 1, Downsample::kStride2}, {32, 1, Downsample::kStride2}, {64, 1, Downsample::kStride2}};
  } else {
    throw std::invalid_argument("unknown model preset: " + name);
  }
  s.validate();
  return s;
}

bool is_known_preset(const std::string& name) {
  return name == "tiny-vgg-T" || name == "tiny-vgg-S" || name == "tiny-vgg-S-stride";
}

namespace {

Tensor he_conv(Rng& rng, std::int64_t kh, std::int64_t kw, std::int64_t cin, std::int64_t cout) {
  const double std_dev = std::sqrt(2.0 / static_cast<double>(kh * kw * cin));
  std::vector<float> w(static_cast<std::size_t>(kh * kw * cin * cout));
  for (auto& x : w) x = static_cast<float>(rng.normal(0.0, std_dev));
  return Tensor::leaf({kh, kw, cin, cout}, std::move(w), true);
}

Tensor he_dense(Rng& rng, std::int64_t in, std::int64_t out) {
  const double std_dev = std::sqrt(2.0 / static_cast<double>(in));
  std::vector<float> w(static_cast<std::size_t>(in * out));
  for (auto& x : w) x = static_cast<float>(rng.normal(0.0, std_dev));
  return Tensor::leaf({in, out}, std::move(w), true);
}

}  // namespace

Model::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(seed);
  std::int64_t cin = spec_.input_c;
  std::int64_t h = spec_.input_h, w = spec_.input_w;
  for (std::size_t b = 0; b < spec_.blocks.size(); ++b) {
    const auto& blk = spec_.blocks[b];
    const bool stride_block = blk.down == Downsample::kStride2;
    for (int c = 0; c < blk.conv_count; ++c) {
      const std::string base = "block" + std::to_string(b) + ".conv" + std::to_string(c);
      params_.emplace_back(base + ".w", he_conv(rng, 3, 3, cin, blk.channels));
      params_.emplace_back(base + ".b", Tensor::zeros({blk.channels}, true));
      cin = blk.channels;
      const int stride = (stride_block && c == blk.conv_count - 1) ? 2 : 1;
      const Padding pad = stride_block ? Padding::kValid : Padding::kSame;
      h = autograd::conv_out_dim(h, 3, stride, pad);
      w = autograd::conv_out_dim(w, 3, stride, pad);
    }
    if (blk.down == Downsample::kMaxPool) {
      h = (h - 2) / 2 + 1;
      w = (w - 2) / 2 + 1;
    }
    if (h < 1 || w < 1) throw std::invalid_argument("model spec: spatial size collapsed below 1");
  }
  std::int64_t features = h * w * cin;
  for (std::size_t i = 0; i < spec_.hidden.size(); ++i) {
    const std::string base = "fc" + std::to_string(i);
    params_.emplace_back(base + ".w", he_dense(rng, features, spec_.hidden[i]));
    params_.emplace_back(base + ".b", Tensor::zeros({spec_.hidden[i]}, true));
    features = spec_.hidden[i];
  }
  params_.emplace_back("head.w", he_dense(rng, features, spec_.classes));
  params_.emplace_back("head.b", Tensor::zeros({spec_.classes}, true));
}

Tensor Model::param(const std::string& name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw std::runtime_error("model: unknown parameter " + name);
}

Tensor Model::forward(Graph& g, const Tensor& batch, std::vector<LayerTap>* taps) const {
  if (batch.shape().size() != 4 || batch.shape()[1] != spec_.input_h ||
      batch.shape()[2] != spec_.input_w || batch.shape()[3] != spec_.input_c) {
    throw std::invalid_argument("model forward: input " + autograd::shape_str(batch.shape()) +
                                " does not match spec input " + std::to_string(spec_.input_h) + "x" +
                                std::to_string(spec_.input_w) + "x" + std::to_string(spec_.input_c));
  }
  if (taps) taps->clear();
  // Tap bookkeeping: group -> (ffm tensor, bfm tensor).
  std::vector<LayerTap> collected(spec_.taps.size());
  Tensor x = batch;
  for (std::size_t b = 0; b < spec_.blocks.size(); ++b) {
    const auto& blk = spec_.blocks[b];
    if (taps) {
      for (std::size_t t = 0; t < spec_.taps.size(); ++t) {
        if (spec_.taps[t].ffm_block == static_cast<int>(b)) collected[t].ffm = x;
      }
    }
    const bool stride_block = blk.down == Downsample::kStride2;
    for (int c = 0; c < blk.conv_count; ++c) {
      const std::string base = "block" + std::to_string(b) + ".conv" + std::to_string(c);
      const int stride = (stride_block && c == blk.conv_count - 1) ? 2 : 1;
      x = autograd::conv2d(g, x, param(base + ".w"), stride,
                           stride_block ? Padding::kValid : Padding::kSame);
      x = autograd::add(g, x, param(base + ".b"));
      x = autograd::relu(g, x);
    }
    if (taps) {
      for (std::size_t t = 0; t < spec_.taps.size(); ++t) {
        if (spec_.taps[t].bfm_block == static_cast<int>(b)) collected[t].bfm = x;
      }
    }
    if (blk.down == Downsample::kMaxPool) x = autograd::maxpool2d(g, x, 2, 2);
  }
  const std::int64_t n = x.shape()[0];
  x = autograd::reshape(g, x, {n, x.size() / n});
  for (std::size_t i = 0; i < spec_.hidden.size(); ++i) {
    const std::string base = "fc" + std::to_string(i);
    x = autograd::matmul(g, x, param(base + ".w"));
    x = autograd::add(g, x, param(base + ".b"));
    x = autograd::relu(g, x);
  }
  x = autograd::matmul(g, x, param("head.w"));
  x = autograd::add(g, x, param("head.b"));
  if (taps) *taps = std::move(collected);
  return x;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [n, t] : params_) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const { return params_; }

std::int64_t Model::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

void Model::set_trainable(bool trainable) {
  for (auto& [n, t] : params_) {
    t.node()->requires_grad = trainable;
    t.node()->needs_grad = trainable;
  }
}

void Model::copy_parameters_from(const Model& other) {
  if (other.params_.size() != params_.size()) {
    throw std::invalid_argument("copy_parameters_from: parameter lists differ");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (other.params_[i].second.shape() != params_[i].second.shape()) {
      throw std::invalid_argument("copy_parameters_from: shape mismatch at " + params_[i].first);
    }
    params_[i].second.value() = other.params_[i].second.value();
  }
}

void Model::save(const std::string& path) const { autograd::save_checkpoint(path, params_); }

void Model::load(const std::string& path) {
  const auto loaded = autograd::load_checkpoint(path);
  std::map<std::string, Tensor> by_name;
  for (const auto& [n, t] : loaded) by_name.emplace(n, t);
  for (auto& [n, t] : params_) {
    auto it = by_name.find(n);
    if (it == by_name.end()) throw std::runtime_error("checkpoint missing parameter " + n + " in " + path);
    if (it->second.shape() != t.shape()) {
      throw std::runtime_error("checkpoint shape mismatch for " + n + " in " + path);
    }
    t.value() = it->second.value();
  }
}

std::string Model::summary() const {
  std::ostringstream os;
  os << spec_.name << ": " << parameter_count() << " parameters, " << spec_.blocks.size()
     << " blocks, " << spec_.taps.size() << " taps";
  return os.str();
}

}  // namespace svdd::models
