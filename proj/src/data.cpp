#include "svdd/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace svdd::data {
namespace fs = std::filesystem;

namespace {

constexpr std::int64_t kCifarDim = 32;
constexpr std::int64_t kCifarPixels = 3072;

void read_cifar_file(const std::string& path, int label_bytes, int fine_label_index, int classes,
                     Dataset& out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_cifar: cannot open " + path);
  is.seekg(0, std::ios::end);
  const std::int64_t file_size = is.tellg();
  is.seekg(0);
  const std::int64_t record = label_bytes + kCifarPixels;
  if (file_size == 0 || file_size % record != 0) {
    throw std::runtime_error("load_cifar: truncated file " + path + ": size " +
                             std::to_string(file_size) + " is not a multiple of record size " +
                             std::to_string(record) + " (stops at byte offset " +
                             std::to_string((file_size / record) * record) + ")");
  }
  const std::int64_t count = file_size / record;
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(record));
  for (std::int64_t i = 0; i < count; ++i) {
    if (!is.read(reinterpret_cast<char*>(buf.data()), record)) {
      throw std::runtime_error("load_cifar: read failed at byte offset " + std::to_string(i * record) +
                               " in " + path);
    }
    const int label = buf[fine_label_index];
    if (label >= classes) {
      throw std::runtime_error("load_cifar: label " + std::to_string(label) + " out of range in " + path);
    }
    out.labels.push_back(label);
    out.labeled_mask.push_back(1);
    // Channel-planar R,G,B planes -> NHWC.
    const std::uint8_t* planes = buf.data() + label_bytes;
    const std::size_t base = out.images.size();
    out.images.resize(base + kCifarPixels);
    for (std::int64_t p = 0; p < kCifarDim * kCifarDim; ++p) {
      out.images[base + p * 3 + 0] = planes[p];
      out.images[base + p * 3 + 1] = planes[1024 + p];
      out.images[base + p * 3 + 2] = planes[2048 + p];
    }
  }
  out.n += count;
}

Dataset empty_cifar(int classes) {
  Dataset d;
  d.h = kCifarDim;
  d.w = kCifarDim;
  d.c = 3;
  d.classes = classes;
  return d;
}

}  // namespace

std::pair<Dataset, Dataset> load_cifar(const std::string& dir) {
  if (fs::exists(fs::path(dir) / "train.bin")) {
    // CIFAR-100: two label bytes per record, fine label second.
    Dataset train = empty_cifar(100), test = empty_cifar(100);
    read_cifar_file((fs::path(dir) / "train.bin").string(), 2, 1, 100, train);
    read_cifar_file((fs::path(dir) / "test.bin").string(), 2, 1, 100, test);
    return {std::move(train), std::move(test)};
  }
  if (fs::exists(fs::path(dir) / "data_batch_1.bin")) {
    Dataset train = empty_cifar(10), test = empty_cifar(10);
    for (int b = 1; b <= 5; ++b) {
      const auto p = fs::path(dir) / ("data_batch_" + std::to_string(b) + ".bin");
      if (fs::exists(p)) read_cifar_file(p.string(), 1, 0, 10, train);
    }
    read_cifar_file((fs::path(dir) / "test_batch.bin").string(), 1, 0, 10, test);
    return {std::move(train), std::move(test)};
  }
  throw std::runtime_error("load_cifar: no train.bin or data_batch_1.bin under " + dir);
}

Dataset synthetic_dataset(int classes, int per_class, std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("synthetic_dataset: need at least 2 classes");
  const std::int64_t dim = 32;
  Dataset d;
  d.h = dim;
  d.w = dim;
  d.c = 3;
  d.classes = classes;
  d.n = static_cast<std::int64_t>(classes) * per_class;
  d.images.resize(static_cast<std::size_t>(d.n * dim * dim * 3));
  d.labels.resize(static_cast<std::size_t>(d.n));
  d.labeled_mask.assign(static_cast<std::size_t>(d.n), 1);

  // Class geometry is a fixed library keyed by class id only, so train/test
  // sets drawn with different seeds share the same class definitions. Blob
  // centers sit on two rings at class-specific angles, which keeps the
  // classes pairwise separated no matter how many are requested.
  struct Blob {
    double cx, cy, radius;
    double color[3];
  };
  std::vector<std::vector<Blob>> geometry(static_cast<std::size_t>(classes));
  const double two_pi = 6.283185307179586;
  for (int c = 0; c < classes; ++c) {
    Rng crng(Rng::mix(0x5edd5eedULL, static_cast<std::uint64_t>(c)));
    auto& blobs = geometry[c];
    blobs.resize(2);
    const double a0 = two_pi * c / classes + crng.uniform(-0.15, 0.15);
    const double a1 = two_pi * (c * 2 + 1) / classes + crng.uniform(-0.15, 0.15);
    blobs[0].cx = 15.5 + 8.5 * std::cos(a0);
    blobs[0].cy = 15.5 + 8.5 * std::sin(a0);
    blobs[1].cx = 15.5 + 4.0 * std::cos(a1);
    blobs[1].cy = 15.5 + 4.0 * std::sin(a1);
    for (auto& b : blobs) {
      b.radius = crng.uniform(2.5, 4.5);
      for (double& col : b.color) col = crng.uniform(40.0, 170.0);
    }
  }

  std::int64_t idx = 0;
  for (int c = 0; c < classes; ++c) {
    for (int s = 0; s < per_class; ++s, ++idx) {
      Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(idx)));
      d.labels[idx] = c;
      const double background = rng.uniform(20.0, 50.0);
      const double amp = rng.uniform(0.75, 1.25);
      double jx[2], jy[2];
      for (int b = 0; b < 2; ++b) {
        jx[b] = rng.uniform(-2.5, 2.5);
        jy[b] = rng.uniform(-2.5, 2.5);
      }
      std::uint8_t* img = d.image(idx);
      for (std::int64_t y = 0; y < dim; ++y) {
        for (std::int64_t x = 0; x < dim; ++x) {
          for (int ch = 0; ch < 3; ++ch) {
            double v = background;
            for (int b = 0; b < 2; ++b) {
              const auto& blob = geometry[c][b];
              const double dx = x - (blob.cx + jx[b]);
              const double dy = y - (blob.cy + jy[b]);
              v += amp * blob.color[ch] * std::exp(-(dx * dx + dy * dy) / (2.0 * blob.radius * blob.radius));
            }
            v += rng.normal(0.0, 18.0);
            img[(y * dim + x) * 3 + ch] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
          }
        }
      }
    }
  }
  return d;
}

void augment_image(std::uint8_t* img, std::int64_t h, std::int64_t w, std::int64_t c,
                   const AugmentConfig& cfg, Rng& rng) {
  const int dx = static_cast<int>(rng.below(2 * cfg.max_shift + 1)) - cfg.max_shift;
  const int dy = static_cast<int>(rng.below(2 * cfg.max_shift + 1)) - cfg.max_shift;
  const double theta = rng.uniform(-cfg.max_rot_deg, cfg.max_rot_deg) * 3.141592653589793 / 180.0;
  const bool flip = rng.bernoulli(cfg.flip_prob);

  std::vector<std::uint8_t> tmp(img, img + h * w * c);
  auto clampi = [](std::int64_t v, std::int64_t hi) { return std::clamp<std::int64_t>(v, 0, hi - 1); };
  // Shift with edge padding.
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const std::int64_t sy = clampi(y - dy, h), sx = clampi(x - dx, w);
      for (std::int64_t ch = 0; ch < c; ++ch) {
        img[(y * w + x) * c + ch] = tmp[(sy * w + sx) * c + ch];
      }
    }
  }
  // Nearest-neighbor rotation about the image center, edge-clamped.
  if (theta != 0.0) {
    tmp.assign(img, img + h * w * c);
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    const double cs = std::cos(theta), sn = std::sin(theta);
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const double ry = y - cy, rx = x - cx;
        const std::int64_t sy = clampi(static_cast<std::int64_t>(std::lround(cs * ry - sn * rx + cy)), h);
        const std::int64_t sx = clampi(static_cast<std::int64_t>(std::lround(sn * ry + cs * rx + cx)), w);
        for (std::int64_t ch = 0; ch < c; ++ch) {
          img[(y * w + x) * c + ch] = tmp[(sy * w + sx) * c + ch];
        }
      }
    }
  }
  if (flip) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w / 2; ++x) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
          std::swap(img[(y * w + x) * c + ch], img[(y * w + (w - 1 - x)) * c + ch]);
        }
      }
    }
  }
}

Dataset subset_labels(const Dataset& d, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0) {
    throw std::invalid_argument("subset_labels: fraction must be in (0, 1]");
  }
  Dataset out = d;
  std::fill(out.labeled_mask.begin(), out.labeled_mask.end(), 0);
  std::vector<std::vector<std::int64_t>> per_class(static_cast<std::size_t>(d.classes));
  for (std::int64_t i = 0; i < d.n; ++i) per_class[d.labels[i]].push_back(i);
  Rng rng(seed);
  for (int c = 0; c < d.classes; ++c) {
    auto& idxs = per_class[c];
    // ceil with a tiny slack so 0.1 * 100 stays exactly 10.
    const std::int64_t want =
        std::min<std::int64_t>(static_cast<std::int64_t>(idxs.size()),
                               static_cast<std::int64_t>(std::ceil(fraction * idxs.size() - 1e-9)));
    if (want < 1) {
      throw std::invalid_argument("subset_labels: class " + std::to_string(c) +
                                  " would have zero labeled samples");
    }
    for (std::size_t i = idxs.size(); i > 1; --i) {
      std::swap(idxs[i - 1], idxs[rng.below(i)]);
    }
    for (std::int64_t i = 0; i < want; ++i) out.labeled_mask[idxs[i]] = 1;
  }
  return out;
}

std::vector<double> channel_means(const Dataset& d) {
  std::vector<double> means(static_cast<std::size_t>(d.c), 0.0);
  for (std::int64_t i = 0; i < d.n * d.h * d.w; ++i) {
    for (std::int64_t ch = 0; ch < d.c; ++ch) means[ch] += d.images[i * d.c + ch] / 255.0;
  }
  for (auto& m : means) m /= static_cast<double>(d.n * d.h * d.w);
  return means;
}

autograd::Tensor make_batch(const Dataset& d, const std::vector<std::int64_t>& indices,
                            const std::vector<double>& means, const AugmentConfig* aug, Rng* rng) {
  const std::int64_t n = static_cast<std::int64_t>(indices.size());
  const std::int64_t img_sz = d.h * d.w * d.c;
  std::vector<float> out(static_cast<std::size_t>(n * img_sz));
  std::vector<std::uint8_t> work;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::uint8_t* src = d.image(indices[i]);
    if (aug) {
      work.assign(src, src + img_sz);
      augment_image(work.data(), d.h, d.w, d.c, *aug, *rng);
      src = work.data();
    }
    for (std::int64_t p = 0; p < img_sz; ++p) {
      const std::int64_t ch = p % d.c;
      out[i * img_sz + p] = static_cast<float>(src[p] / 255.0 - means[ch]);
    }
  }
  return autograd::Tensor::leaf({n, d.h, d.w, d.c}, std::move(out), false);
}

std::vector<int> batch_labels(const Dataset& d, const std::vector<std::int64_t>& indices) {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out[i] = d.labeled_mask[indices[i]] ? d.labels[indices[i]] : -1;
  }
  return out;
}

}  // namespace svdd::data
