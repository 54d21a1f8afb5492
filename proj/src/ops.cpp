#include "svdd/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>

namespace svdd::autograd {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Tensor make_output(Shape shape, bool needs_grad) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.node()->needs_grad = needs_grad && !NoGradGuard::active();
  return t;
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                              " and " + shape_str(b.shape()));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": shape " + shape_str(a.shape()) + " " + detail);
}

// True when b's shape equals the trailing suffix of a's shape.
bool is_suffix(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (a[a.size() - b.size() + i] != b[i]) return false;
  }
  return true;
}

}  // namespace

std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride, Padding padding) {
  if (padding == Padding::kSame) return (in + stride - 1) / stride;
  return (in - k) / stride + 1;
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  if (!same && !is_suffix(a.shape(), b.shape())) shape_error("add", a, b);
  const std::int64_t bs = b.size();
  Tensor out = make_output(a.shape(), a.needs_grad() || b.needs_grad());
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.value();
  for (std::int64_t i = 0; i < a.size(); ++i) ov[i] = av[i] + bv[i % bs];
  if (!out.needs_grad()) return out;
  Tensor ac = a, bc = b, oc = out;
  g.record("add", {a, b}, out, [ac, bc, oc, bs]() mutable {
    const auto& go = oc.grad();
    if (ac.needs_grad()) {
      ac.ensure_grad();
      auto& ga = ac.grad();
      for (std::int64_t i = 0; i < ac.size(); ++i) ga[i] += go[i];
    }
    if (bc.needs_grad()) {
      bc.ensure_grad();
      auto& gb = bc.grad();
      for (std::int64_t i = 0; i < ac.size(); ++i) gb[i % bs] += go[i];
    }
  });
  return out;
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", a, b);
  Tensor out = make_output(a.shape(), a.needs_grad() || b.needs_grad());
  for (std::int64_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] - b.value()[i];
  if (!out.needs_grad()) return out;
  Tensor ac = a, bc = b, oc = out;
  g.record("sub", {a, b}, out, [ac, bc, oc]() mutable {
    const auto& go = oc.grad();
    if (ac.needs_grad()) {
      ac.ensure_grad();
      for (std::int64_t i = 0; i < ac.size(); ++i) ac.grad()[i] += go[i];
    }
    if (bc.needs_grad()) {
      bc.ensure_grad();
      for (std::int64_t i = 0; i < bc.size(); ++i) bc.grad()[i] -= go[i];
    }
  });
  return out;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a, b);
  Tensor out = make_output(a.shape(), a.needs_grad() || b.needs_grad());
  for (std::int64_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] * b.value()[i];
  if (!out.needs_grad()) return out;
  Tensor ac = a, bc = b, oc = out;
  g.record("mul", {a, b}, out, [ac, bc, oc]() mutable {
    const auto& go = oc.grad();
    if (ac.needs_grad()) {
      ac.ensure_grad();
      for (std::int64_t i = 0; i < ac.size(); ++i) ac.grad()[i] += go[i] * bc.value()[i];
    }
    if (bc.needs_grad()) {
      bc.ensure_grad();
      for (std::int64_t i = 0; i < bc.size(); ++i) bc.grad()[i] += go[i] * ac.value()[i];
    }
  });
  return out;
}

Tensor scale(Graph& g, const Tensor& a, double c) {
  Tensor out = make_output(a.shape(), a.needs_grad());
  const float cf = static_cast<float>(c);
  for (std::int64_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] * cf;
  if (!out.needs_grad()) return out;
  Tensor ac = a, oc = out;
  g.record("scale", {a}, out, [ac, oc, cf]() mutable {
    ac.ensure_grad();
    const auto& go = oc.grad();
    for (std::int64_t i = 0; i < ac.size(); ++i) ac.grad()[i] += go[i] * cf;
  });
  return out;
}

Tensor exp(Graph& g, const Tensor& a) {
  Tensor out = make_output(a.shape(), a.needs_grad());
  for (std::int64_t i = 0; i < a.size(); ++i) out.value()[i] = std::exp(a.value()[i]);
  if (!out.needs_grad()) return out;
  Tensor ac = a, oc = out;
  g.record("exp", {a}, out, [ac, oc]() mutable {
    ac.ensure_grad();
    const auto& go = oc.grad();
    for (std::int64_t i = 0; i < ac.size(); ++i) ac.grad()[i] += go[i] * oc.value()[i];
  });
  return out;
}

Tensor relu(Graph& g, const Tensor& a) {
  Tensor out = make_output(a.shape(), a.needs_grad());
  for (std::int64_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] > 0.0f ? a.value()[i] : 0.0f;
  if (!out.needs_grad()) return out;
  Tensor ac = a, oc = out;
  g.record("relu", {a}, out, [ac, oc]() mutable {
    ac.ensure_grad();
    const auto& go = oc.grad();
    for (std::int64_t i = 0; i < ac.size(); ++i) {
      if (ac.value()[i] > 0.0f) ac.grad()[i] += go[i];
    }
  });
  return out;
}

Tensor reshape(Graph& g, const Tensor& a, Shape new_shape) {
  if (numel(new_shape) != a.size()) {
    shape_error("reshape", a, "cannot reshape to " + shape_str(new_shape));
  }
  Tensor out = make_output(new_shape, a.needs_grad());
  out.value() = a.value();
  if (!out.needs_grad()) return out;
  Tensor ac = a, oc = out;
  g.record("reshape", {a}, out, [ac, oc]() mutable {
    ac.ensure_grad();
    const auto& go = oc.grad();
    for (std::int64_t i = 0; i < ac.size(); ++i) ac.grad()[i] += go[i];
  });
  return out;
}

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    shape_error("matmul", a, b);
  }
  const std::int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = make_output({m, n}, a.needs_grad() || b.needs_grad());
  CMapMat A(a.value().data(), m, k), B(b.value().data(), k, n);
  MapMat(out.value().data(), m, n).noalias() = A * B;
  if (!out.needs_grad()) return out;
  Tensor ac = a, bc = b, oc = out;
  g.record("matmul", {a, b}, out, [ac, bc, oc, m, k, n]() mutable {
    CMapMat go(oc.grad().data(), m, n);
    if (ac.needs_grad()) {
      ac.ensure_grad();
      CMapMat B(bc.value().data(), k, n);
      MapMat(ac.grad().data(), m, k).noalias() += go * B.transpose();
    }
    if (bc.needs_grad()) {
      bc.ensure_grad();
      CMapMat A(ac.value().data(), m, k);
      MapMat(bc.grad().data(), k, n).noalias() += A.transpose() * go;
    }
  });
  return out;
}

namespace {

struct ConvDims {
  std::int64_t n, h, w, cin, kh, kw, cout, oh, ow, pad_top, pad_left;
  int stride;
};

// Patch matrix: one row per output site, Kh*Kw*Cin columns. Out-of-image
// taps are zero.
void im2col(const std::vector<float>& x, const ConvDims& d, std::vector<float>& col) {
  const std::int64_t patch = d.kh * d.kw * d.cin;
  col.assign(static_cast<std::size_t>(d.n * d.oh * d.ow * patch), 0.0f);
  for (std::int64_t n = 0; n < d.n; ++n) {
    for (std::int64_t oh = 0; oh < d.oh; ++oh) {
      for (std::int64_t ow = 0; ow < d.ow; ++ow) {
        float* row = col.data() + ((n * d.oh + oh) * d.ow + ow) * patch;
        for (std::int64_t kh = 0; kh < d.kh; ++kh) {
          const std::int64_t ih = oh * d.stride + kh - d.pad_top;
          if (ih < 0 || ih >= d.h) continue;
          for (std::int64_t kw = 0; kw < d.kw; ++kw) {
            const std::int64_t iw = ow * d.stride + kw - d.pad_left;
            if (iw < 0 || iw >= d.w) continue;
            const float* src = x.data() + ((n * d.h + ih) * d.w + iw) * d.cin;
            std::memcpy(row + (kh * d.kw + kw) * d.cin, src, sizeof(float) * d.cin);
          }
        }
      }
    }
  }
}

void col2im_add(const std::vector<float>& col, const ConvDims& d, std::vector<float>& gx) {
  const std::int64_t patch = d.kh * d.kw * d.cin;
  for (std::int64_t n = 0; n < d.n; ++n) {
    for (std::int64_t oh = 0; oh < d.oh; ++oh) {
      for (std::int64_t ow = 0; ow < d.ow; ++ow) {
        const float* row = col.data() + ((n * d.oh + oh) * d.ow + ow) * patch;
        for (std::int64_t kh = 0; kh < d.kh; ++kh) {
          const std::int64_t ih = oh * d.stride + kh - d.pad_top;
          if (ih < 0 || ih >= d.h) continue;
          for (std::int64_t kw = 0; kw < d.kw; ++kw) {
            const std::int64_t iw = ow * d.stride + kw - d.pad_left;
            if (iw < 0 || iw >= d.w) continue;
            float* dst = gx.data() + ((n * d.h + ih) * d.w + iw) * d.cin;
            const float* src = row + (kh * d.kw + kw) * d.cin;
            for (std::int64_t c = 0; c < d.cin; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(Graph& g, const Tensor& x, const Tensor& w, int stride, Padding padding) {
  if (x.shape().size() != 4 || w.shape().size() != 4) shape_error("conv2d", x, w);
  if (x.shape()[3] != w.shape()[2]) shape_error("conv2d", x, w);
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  ConvDims d;
  d.n = x.shape()[0];
  d.h = x.shape()[1];
  d.w = x.shape()[2];
  d.cin = x.shape()[3];
  d.kh = w.shape()[0];
  d.kw = w.shape()[1];
  d.cout = w.shape()[3];
  d.stride = stride;
  d.oh = conv_out_dim(d.h, d.kh, stride, padding);
  d.ow = conv_out_dim(d.w, d.kw, stride, padding);
  if (d.oh < 1 || d.ow < 1) shape_error("conv2d", x, "too small for kernel " + shape_str(w.shape()));
  if (padding == Padding::kSame) {
    d.pad_top = std::max<std::int64_t>((d.oh - 1) * stride + d.kh - d.h, 0) / 2;
    d.pad_left = std::max<std::int64_t>((d.ow - 1) * stride + d.kw - d.w, 0) / 2;
  } else {
    d.pad_top = d.pad_left = 0;
  }
  const std::int64_t rows = d.n * d.oh * d.ow;
  const std::int64_t patch = d.kh * d.kw * d.cin;

  auto col = std::make_shared<std::vector<float>>();
  im2col(x.value(), d, *col);
  Tensor out = make_output({d.n, d.oh, d.ow, d.cout}, x.needs_grad() || w.needs_grad());
  {
    CMapMat C(col->data(), rows, patch), W(w.value().data(), patch, d.cout);
    MapMat(out.value().data(), rows, d.cout).noalias() = C * W;
  }
  if (!out.needs_grad()) return out;
  Tensor xc = x, wc = w, oc = out;
  g.record("conv2d", {x, w}, out, [xc, wc, oc, d, col, rows, patch]() mutable {
    CMapMat go(oc.grad().data(), rows, d.cout);
    if (wc.needs_grad()) {
      wc.ensure_grad();
      CMapMat C(col->data(), rows, patch);
      MapMat(wc.grad().data(), patch, d.cout).noalias() += C.transpose() * go;
    }
    if (xc.needs_grad()) {
      xc.ensure_grad();
      std::vector<float> gcol(static_cast<std::size_t>(rows * patch));
      CMapMat W(wc.value().data(), patch, d.cout);
      MapMat(gcol.data(), rows, patch).noalias() = go * W.transpose();
      col2im_add(gcol, d, xc.grad());
    }
  });
  return out;
}

Tensor maxpool2d(Graph& g, const Tensor& x, int window, int stride) {
  if (x.shape().size() != 4) shape_error("maxpool2d", x, "expected rank-4 NHWC input");
  if (window < 1 || stride < 1) throw std::invalid_argument("maxpool2d: window/stride must be >= 1");
  const std::int64_t n = x.shape()[0], h = x.shape()[1], w = x.shape()[2], c = x.shape()[3];
  const std::int64_t oh = (h - window) / stride + 1;
  const std::int64_t ow = (w - window) / stride + 1;
  if (oh < 1 || ow < 1) shape_error("maxpool2d", x, "too small for window " + std::to_string(window));
  Tensor out = make_output({n, oh, ow, c}, x.needs_grad());
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * oh * ow * c));
  const auto& xv = x.value();
  auto& ov = out.value();
  for (std::int64_t in = 0; in < n; ++in) {
    for (std::int64_t io = 0; io < oh; ++io) {
      for (std::int64_t jo = 0; jo < ow; ++jo) {
        for (std::int64_t ic = 0; ic < c; ++ic) {
          float best = -std::numeric_limits<float>::infinity();
          std::int64_t best_idx = -1;
          for (std::int64_t dh = 0; dh < window; ++dh) {
            for (std::int64_t dw = 0; dw < window; ++dw) {
              const std::int64_t src = (((in * h) + io * stride + dh) * w + jo * stride + dw) * c + ic;
              if (xv[src] > best) {
                best = xv[src];
                best_idx = src;
              }
            }
          }
          const std::int64_t dst = ((in * oh + io) * ow + jo) * c + ic;
          ov[dst] = best;
          (*argmax)[dst] = best_idx;
        }
      }
    }
  }
  if (!out.needs_grad()) return out;
  Tensor xc = x, oc = out;
  g.record("maxpool2d", {x}, out, [xc, oc, argmax]() mutable {
    xc.ensure_grad();
    const auto& go = oc.grad();
    for (std::size_t i = 0; i < argmax->size(); ++i) xc.grad()[(*argmax)[i]] += go[i];
  });
  return out;
}

Tensor softmax_cross_entropy(Graph& g, const Tensor& logits, const std::vector<int>& labels) {
  if (logits.shape().size() != 2) shape_error("softmax_cross_entropy", logits, "expected [N x C] logits");
  const std::int64_t n = logits.shape()[0], c = logits.shape()[1];
  if (static_cast<std::int64_t>(labels.size()) != n) {
    shape_error("softmax_cross_entropy", logits,
                "label count " + std::to_string(labels.size()) + " != batch " + std::to_string(n));
  }
  std::int64_t labeled = 0;
  for (int y : labels) {
    if (y >= static_cast<int>(c)) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(y) +
                                  " out of range for " + std::to_string(c) + " classes");
    }
    if (y >= 0) ++labeled;
  }
  auto probs = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n * c));
  double total = 0.0;
  const auto& lv = logits.value();
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = lv.data() + i * c;
    float m = row[0];
    for (std::int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (std::int64_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j]) - m);
    for (std::int64_t j = 0; j < c; ++j) {
      (*probs)[i * c + j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - m) / z);
    }
    if (labels[i] >= 0) total += std::log(z) + m - row[labels[i]];
  }
  const double denom = labeled > 0 ? static_cast<double>(labeled) : 1.0;
  Tensor out = make_output({1}, logits.needs_grad());
  out.value()[0] = static_cast<float>(total / denom);
  if (!out.needs_grad()) return out;
  Tensor lc = logits, oc = out;
  g.record("softmax_cross_entropy", {logits}, out, [lc, oc, probs, labels, n, c, denom]() mutable {
    lc.ensure_grad();
    const float go = oc.grad()[0];
    const float s = static_cast<float>(go / denom);
    for (std::int64_t i = 0; i < n; ++i) {
      if (labels[i] < 0) continue;
      for (std::int64_t j = 0; j < c; ++j) {
        const float onehot = (j == labels[i]) ? 1.0f : 0.0f;
        lc.grad()[i * c + j] += s * ((*probs)[i * c + j] - onehot);
      }
    }
  });
  return out;
}

Tensor l2_norm(Graph& g, const Tensor& a) {
  double ss = 0.0;
  for (float v : a.value()) ss += static_cast<double>(v) * v;
  const double norm = std::sqrt(ss);
  Tensor out = make_output({1}, a.needs_grad());
  out.value()[0] = static_cast<float>(norm);
  if (!out.needs_grad()) return out;
  Tensor ac = a, oc = out;
  g.record("l2_norm", {a}, out, [ac, oc]() mutable {
    ac.ensure_grad();
    const float norm = oc.value()[0];
    if (norm <= 0.0f) return;  // subgradient 0 at the origin
    const float go = oc.grad()[0];
    for (std::int64_t i = 0; i < ac.size(); ++i) ac.grad()[i] += go * ac.value()[i] / norm;
  });
  return out;
}

Tensor slice_batch(Graph& g, const Tensor& x, std::int64_t n) {
  if (x.shape().size() < 2) shape_error("slice_batch", x, "expected a batched tensor");
  if (n < 0 || n >= x.shape()[0]) {
    shape_error("slice_batch", x, "index " + std::to_string(n) + " out of range");
  }
  Shape rest(x.shape().begin() + 1, x.shape().end());
  const std::int64_t sz = numel(rest);
  Tensor out = make_output(rest, x.needs_grad());
  std::memcpy(out.value().data(), x.value().data() + n * sz, sizeof(float) * sz);
  if (!out.needs_grad()) return out;
  Tensor xc = x, oc = out;
  g.record("slice_batch", {x}, out, [xc, oc, n, sz]() mutable {
    xc.ensure_grad();
    const auto& go = oc.grad();
    float* dst = xc.grad().data() + n * sz;
    for (std::int64_t i = 0; i < sz; ++i) dst[i] += go[i];
  });
  return out;
}

}  // namespace svdd::autograd
