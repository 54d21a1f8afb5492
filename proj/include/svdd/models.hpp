#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "svdd/ops.hpp"
#include "svdd/tensor.hpp"

namespace svdd::models {

enum class Downsample { kMaxPool, kStride2 };

struct BlockSpec {
  std::int64_t channels = 0;
  int conv_count = 1;
  Downsample down = Downsample::kMaxPool;
};

// Sensing points are block boundaries: a tap's FFM is the tensor entering
// `ffm_block`'s first conv, its BFM the tensor leaving `bfm_block`'s last
// activation (before any pooling).
struct TapSpec {
  int ffm_block = 0;
  int bfm_block = 0;
};

struct ModelSpec {
  std::string name;
  std::int64_t input_h = 32, input_w = 32, input_c = 3;
  std::vector<BlockSpec> blocks;
  std::vector<TapSpec> taps;
  std::vector<std::int64_t> hidden;
  std::int64_t classes = 10;

  void validate() const;  // throws naming the violated rule
};

// Presets: "tiny-vgg-T" (3 blocks of 16/32/64 channels, 2 convs each,
// maxpool), "tiny-vgg-S" (1 conv per block, maxpool), "tiny-vgg-S-stride"
// (1 conv per block, stride-2 valid convs, no pooling).
ModelSpec preset(const std::string& name, std::int64_t classes);
bool is_known_preset(const std::string& name);

struct LayerTap {
  autograd::Tensor ffm;  // [N x h x w x D_F]
  autograd::Tensor bfm;  // [N x h x w x D_B]
};

class Model {
 public:
  // He-initialized conv/dense weights from the seeded generator, zero biases.
  Model(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }

  // logits [N x classes]; taps captured at the declared points when asked.
  autograd::Tensor forward(autograd::Graph& g, const autograd::Tensor& batch,
                           std::vector<LayerTap>* taps = nullptr) const;

  std::vector<autograd::Tensor> parameters() const;
  std::vector<std::pair<std::string, autograd::Tensor>> named_parameters() const;
  std::int64_t parameter_count() const;

  // Frozen models (requires_grad off) record nothing on the tape.
  void set_trainable(bool trainable);

  // Overwrites parameter values from another model or checkpoint; shapes
  // must agree exactly.
  void copy_parameters_from(const Model& other);
  void save(const std::string& path) const;
  void load(const std::string& path);

  std::string summary() const;

 private:
  ModelSpec spec_;
  std::vector<std::pair<std::string, autograd::Tensor>> params_;
  autograd::Tensor param(const std::string& name) const;
};

}  // namespace svdd::models
