#include "svdd/distill_ops.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace svdd::distill {

using autograd::Graph;
using autograd::Tensor;

Tensor svd_right_vectors(Graph& g, const Tensor& m, int rank) {
  if (m.shape().size() != 2) {
    throw std::invalid_argument("svd_right_vectors: expected a matrix, got " +
                                autograd::shape_str(m.shape()));
  }
  const Eigen::Index rows = m.shape()[0], cols = m.shape()[1];
  Eigen::MatrixXd md(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) md(r, c) = m.value()[r * cols + c];
  }
  auto svd = std::make_shared<linalg::TruncatedSvd<double>>(linalg::truncated_svd<double>(md, rank));

  Tensor out = Tensor::zeros({rank, cols});
  out.node()->needs_grad = m.needs_grad() && !autograd::NoGradGuard::active();
  for (int i = 0; i < rank; ++i) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      out.value()[i * cols + c] = static_cast<float>(svd->v(i, c));
    }
  }
  if (!out.needs_grad()) return out;
  Tensor mc = m, oc = out;
  g.record("svd_right_vectors", {m}, out, [mc, oc, svd, rank, rows, cols]() mutable {
    Eigen::MatrixXd grad_v(rank, cols);
    for (int i = 0; i < rank; ++i) {
      for (Eigen::Index c = 0; c < cols; ++c) grad_v(i, c) = oc.grad()[i * cols + c];
    }
    const Eigen::MatrixXd grad_m = linalg::svd_backward(*svd, grad_v);
    mc.ensure_grad();
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        mc.grad()[r * cols + c] += static_cast<float>(grad_m(r, c));
      }
    }
  });
  return out;
}

Tensor select_scale_rows(Graph& g, const Tensor& v, const std::vector<int>& indices,
                         const std::vector<double>& signs, const std::vector<double>& scales) {
  if (v.shape().size() != 2) {
    throw std::invalid_argument("select_scale_rows: expected a matrix, got " +
                                autograd::shape_str(v.shape()));
  }
  const std::int64_t k = static_cast<std::int64_t>(indices.size());
  const std::int64_t d = v.shape()[1];
  Tensor out = Tensor::zeros({k, d});
  out.node()->needs_grad = v.needs_grad() && !autograd::NoGradGuard::active();
  for (std::int64_t i = 0; i < k; ++i) {
    const float f = static_cast<float>(signs[i] * scales[i]);
    const float* src = v.value().data() + indices[i] * d;
    for (std::int64_t c = 0; c < d; ++c) out.value()[i * d + c] = f * src[c];
  }
  if (!out.needs_grad()) return out;
  Tensor vc = v, oc = out;
  g.record("select_scale_rows", {v}, out, [vc, oc, indices, signs, scales, k, d]() mutable {
    vc.ensure_grad();
    for (std::int64_t i = 0; i < k; ++i) {
      const float f = static_cast<float>(signs[i] * scales[i]);
      float* dst = vc.grad().data() + indices[i] * d;
      const float* go = oc.grad().data() + i * d;
      for (std::int64_t c = 0; c < d; ++c) dst[c] += f * go[c];
    }
  });
  return out;
}

Tensor rbf_correlation(Graph& g, const Tensor& front, const Tensor& back, double beta) {
  if (beta <= 0.0) throw std::invalid_argument("rbf_correlation: beta must be > 0");
  if (front.shape().size() != 2 || back.shape().size() != 2 || front.shape()[0] != back.shape()[0]) {
    throw std::invalid_argument("rbf_correlation: incompatible shapes " +
                                autograd::shape_str(front.shape()) + " and " +
                                autograd::shape_str(back.shape()));
  }
  const std::int64_t k = front.shape()[0], df = front.shape()[1], db = back.shape()[1];
  Tensor out = Tensor::zeros({k, df, db});
  out.node()->needs_grad = (front.needs_grad() || back.needs_grad()) && !autograd::NoGradGuard::active();
  const float inv_beta = static_cast<float>(1.0 / beta);
  for (std::int64_t l = 0; l < k; ++l) {
    for (std::int64_t m = 0; m < df; ++m) {
      const float fm = front.value()[l * df + m];
      for (std::int64_t n = 0; n < db; ++n) {
        const float diff = fm - back.value()[l * db + n];
        out.value()[(l * df + m) * db + n] = std::exp(-diff * diff * inv_beta);
      }
    }
  }
  if (!out.needs_grad()) return out;
  Tensor fc = front, bc = back, oc = out;
  g.record("rbf_correlation", {front, back}, out, [fc, bc, oc, k, df, db, inv_beta]() mutable {
    if (fc.needs_grad()) fc.ensure_grad();
    if (bc.needs_grad()) bc.ensure_grad();
    for (std::int64_t l = 0; l < k; ++l) {
      for (std::int64_t m = 0; m < df; ++m) {
        const float fm = fc.value()[l * df + m];
        for (std::int64_t n = 0; n < db; ++n) {
          const std::int64_t idx = (l * df + m) * db + n;
          const float diff = fm - bc.value()[l * db + n];
          const float d_entry = -2.0f * diff * inv_beta * oc.value()[idx] * oc.grad()[idx];
          if (fc.needs_grad()) fc.grad()[l * df + m] += d_entry;
          if (bc.needs_grad()) bc.grad()[l * db + n] -= d_entry;
        }
      }
    }
  });
  return out;
}

Tensor student_dfv(Graph& g, const Tensor& ffm, const Tensor& bfm, int k, double beta,
                   const TeacherTapRef& ref) {
  auto side = [&](const Tensor& map, const Eigen::MatrixXd& teacher_v,
                  const Eigen::VectorXd& teacher_sigma, const char* name) {
    if (map.shape().size() != 3) {
      throw std::invalid_argument(std::string("student_dfv: ") + name + " must be H x W x D, got " +
                                  autograd::shape_str(map.shape()));
    }
    const std::int64_t h = map.shape()[0], w = map.shape()[1], d = map.shape()[2];
    if (k + 1 > std::min(h * w, d)) {
      throw std::invalid_argument(std::string("student_dfv: rank k+1 = ") + std::to_string(k + 1) +
                                  " exceeds min(H*W, D) for " + name + " of shape " +
                                  autograd::shape_str(map.shape()));
    }
    // Row-major H x W x D is already (H*W) x D.
    Tensor m = autograd::reshape(g, map, {h * w, d});
    Tensor v = svd_right_vectors(g, m, k + 1);
    // Alignment decided from forward values; constant during backward.
    Eigen::MatrixXd v_now(k + 1, d);
    for (int i = 0; i <= k; ++i) {
      for (std::int64_t c = 0; c < d; ++c) v_now(i, c) = v.value()[i * d + c];
    }
    linalg::TruncatedSvd<double> probe;
    probe.rank = k + 1;
    probe.v = v_now;
    const auto alignment = align_student(teacher_v, probe, teacher_sigma);
    const double sigma_norm = teacher_sigma.norm();
    std::vector<double> scales(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) scales[i] = teacher_sigma(i) / sigma_norm;
    return select_scale_rows(g, v, alignment.indices, alignment.signs, scales);
  };
  Tensor front = side(ffm, ref.ffm_v, ref.ffm_sigma, "FFM");
  Tensor back = side(bfm, ref.bfm_v, ref.bfm_sigma, "BFM");
  return rbf_correlation(g, front, back, beta);
}

}  // namespace svdd::distill
