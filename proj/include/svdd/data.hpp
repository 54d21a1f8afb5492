#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "svdd/rng.hpp"
#include "svdd/tensor.hpp"

namespace svdd::data {

struct Dataset {
  std::int64_t n = 0, h = 0, w = 0, c = 0;
  int classes = 0;
  std::vector<std::uint8_t> images;       // n*h*w*c, NHWC
  std::vector<int> labels;                // in [0, classes)
  std::vector<std::uint8_t> labeled_mask; // 1 = label visible to the main loss

  const std::uint8_t* image(std::int64_t i) const { return images.data() + i * h * w * c; }
  std::uint8_t* image(std::int64_t i) { return images.data() + i * h * w * c; }
};

// Standard CIFAR binary record layout: 1 label byte (CIFAR-10 batches) or 2
// label bytes, coarse then fine (CIFAR-100 train.bin/test.bin), followed by
// 3072 channel-planar pixel bytes. The directory decides which flavour.
std::pair<Dataset, Dataset> load_cifar(const std::string& dir);

// Class-conditional Gaussian-blob images, separable enough that the tiny
// teacher clears 90% test accuracy within ~20 epochs, with per-pixel noise
// so the task is not trivial for a small student.
Dataset synthetic_dataset(int classes, int per_class, std::uint64_t seed);

struct AugmentConfig {
  int max_shift = 4;         // px, uniform in [-max_shift, +max_shift]
  double max_rot_deg = 15.0; // uniform in [-max_rot_deg, +max_rot_deg]
  double flip_prob = 0.5;
};

// In-place per-image augmentation: shift with edge padding, nearest-neighbor
// rotation, horizontal flip. All-zero config is the identity. Shift by +s
// then -s is NOT the identity (edge padding loses pixels).
void augment_image(std::uint8_t* img, std::int64_t h, std::int64_t w, std::int64_t c,
                   const AugmentConfig& cfg, Rng& rng);

// Per-class stratified mask: exactly ceil(fraction * class count) labeled
// samples per class, seed-deterministic. Rejects classes left without any
// labeled sample.
Dataset subset_labels(const Dataset& d, double fraction, std::uint64_t seed);

// Per-channel training means for the model-boundary normalization.
std::vector<double> channel_means(const Dataset& d);

// Gathered, optionally augmented, normalized f32 batch [N x H x W x C]:
// pixels scaled to [0,1] minus the per-channel mean.
autograd::Tensor make_batch(const Dataset& d, const std::vector<std::int64_t>& indices,
                            const std::vector<double>& means, const AugmentConfig* aug, Rng* rng);

// Labels for a gathered batch, -1 where the mask hides them.
std::vector<int> batch_labels(const Dataset& d, const std::vector<std::int64_t>& indices);

}  // namespace svdd::data
