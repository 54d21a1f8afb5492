#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace svdd::linalg {

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// One-sided (Hestenes) Jacobi eigendecomposition of a symmetric positive
// semi-definite matrix: rotations orthogonalize the columns of a working
// copy, so every update is a contiguous column operation. For a PSD matrix
// the column norms of the converged copy are its eigenvalues and the
// accumulated rotations its eigenvectors. Eigenpairs come back sorted by
// eigenvalue, descending, with a stable tie order taken from the sweep.
template <class Scalar>
void jacobi_eigh(const Matrix<Scalar>& a, Matrix<Scalar>& eigvecs, Vector<Scalar>& eigvals) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("jacobi_eigh: matrix must be square");
  Matrix<Scalar> w = a;
  Matrix<Scalar> v = Matrix<Scalar>::Identity(n, n);
  Vector<Scalar> sq = w.colwise().squaredNorm();
  const Scalar eps = Scalar(64) * std::numeric_limits<Scalar>::epsilon();
  auto rotate_cols = [n](Scalar* x, Scalar* y, Scalar c, Scalar sn) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar xi = x[i];
      x[i] = c * xi - sn * y[i];
      y[i] = sn * xi + c * y[i];
    }
  };
  for (int sweep = 0; sweep < 64; ++sweep) {
    Eigen::Index rotated = 0;
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Scalar gamma = w.col(p).dot(w.col(q));
        const Scalar bound = std::sqrt(sq(p) * sq(q));
        if (bound <= Scalar(0) || std::abs(gamma) <= eps * bound) continue;
        const Scalar theta = (sq(q) - sq(p)) / (Scalar(2) * gamma);
        const Scalar t = (theta >= 0 ? Scalar(1) : Scalar(-1)) /
                         (std::abs(theta) + std::sqrt(theta * theta + Scalar(1)));
        const Scalar c = Scalar(1) / std::sqrt(t * t + Scalar(1));
        const Scalar sn = t * c;
        rotate_cols(w.col(p).data(), w.col(q).data(), c, sn);
        sq(p) -= t * gamma;
        sq(q) += t * gamma;
        rotate_cols(v.col(p).data(), v.col(q).data(), c, sn);
        ++rotated;
      }
    }
    if (rotated == 0) break;
    sq = w.colwise().squaredNorm();  // undo incremental drift once per sweep
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&sq](Eigen::Index i, Eigen::Index j) { return sq(i) > sq(j); });
  eigvals.resize(n);
  eigvecs.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    eigvals(i) = std::sqrt(std::max(sq(order[i]), Scalar(0)));
    eigvecs.col(i) = v.col(order[i]);
  }
}

// Rank-k products of M = U diag(Sigma) V^T plus the full spectrum, which the
// backward pass needs: a singular vector's perturbation couples to every
// other singular direction, not just the retained k.
template <class Scalar>
struct TruncatedSvd {
  int rank = 0;                // k
  Eigen::Index rows = 0;       // H*W
  Eigen::Index cols = 0;       // D
  Matrix<Scalar> v;            // k x D, row i = i-th right-singular vector
  Vector<Scalar> sigma;        // k, non-negative, non-increasing
  Matrix<Scalar> u_full;       // rows x r
  Matrix<Scalar> v_full;       // cols x r (columns are vectors)
  Vector<Scalar> sigma_full;   // r = min(rows, cols)
};

// Row-major H x W x D feature map buffer -> (H*W) x D matrix; row h*W + w
// holds the D-vector at spatial site (h, w).
template <class Scalar, class Src>
Matrix<Scalar> flatten_feature_map(const Src* data, Eigen::Index h, Eigen::Index w, Eigen::Index d) {
  if (h < 1 || w < 1 || d < 1) throw std::invalid_argument("flatten_feature_map: dims must be >= 1");
  Matrix<Scalar> m(h * w, d);
  for (Eigen::Index r = 0; r < h * w; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) m(r, c) = static_cast<Scalar>(data[r * d + c]);
  }
  return m;
}

template <class Scalar, class Dst>
void unflatten_feature_map(const Matrix<Scalar>& m, Dst* data) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data[r * m.cols() + c] = static_cast<Dst>(m(r, c));
  }
}

// Top-k singular triplets of m via Jacobi on the smaller Gram matrix
// (M^T M when D <= H*W, M M^T otherwise). With `with_backward_cache` the
// full spectrum is retained for svd_backward; without it only the k exposed
// triplets are recovered (cheaper, forward-only use).
template <class Scalar>
TruncatedSvd<Scalar> truncated_svd(const Matrix<Scalar>& m, int k, bool with_backward_cache = true) {
  const Eigen::Index mr = m.rows(), n = m.cols();
  const Eigen::Index r = std::min(mr, n);
  if (k < 1 || k > r) {
    throw std::invalid_argument("truncated_svd: rank " + std::to_string(k) + " out of range for " +
                                std::to_string(mr) + "x" + std::to_string(n) + " matrix");
  }
  TruncatedSvd<Scalar> out;
  out.rank = k;
  out.rows = mr;
  out.cols = n;
  Matrix<Scalar> eigvecs;
  Vector<Scalar> eigvals;
  if (n <= mr) {
    jacobi_eigh<Scalar>(m.transpose() * m, eigvecs, eigvals);
  } else {
    jacobi_eigh<Scalar>(m * m.transpose(), eigvecs, eigvals);
  }
  const Eigen::Index keep = with_backward_cache ? r : k;
  out.sigma_full = eigvals.head(keep).cwiseMax(Scalar(0)).cwiseSqrt();
  const Scalar lead = out.sigma_full.size() > 0 ? out.sigma_full(0) : Scalar(0);
  const Scalar tiny = std::max(lead, Scalar(1)) * Scalar(1e-13);
  if (n <= mr) {
    out.v_full = eigvecs.leftCols(keep);
    out.u_full.resize(mr, keep);
    for (Eigen::Index i = 0; i < keep; ++i) {
      out.u_full.col(i) = out.sigma_full(i) > tiny ? Vector<Scalar>(m * out.v_full.col(i) / out.sigma_full(i))
                                                   : Vector<Scalar>(Vector<Scalar>::Zero(mr));
    }
  } else {
    out.u_full = eigvecs.leftCols(keep);
    out.v_full.resize(n, keep);
    for (Eigen::Index i = 0; i < keep; ++i) {
      out.v_full.col(i) = out.sigma_full(i) > tiny
                              ? Vector<Scalar>(m.transpose() * out.u_full.col(i) / out.sigma_full(i))
                              : Vector<Scalar>(Vector<Scalar>::Zero(n));
    }
  }
  out.sigma = out.sigma_full.head(k);
  out.v = out.v_full.leftCols(k).transpose();
  return out;
}

// Gradient of the source matrix given the gradient of the k retained right
// singular vectors only (gradients w.r.t. U and Sigma are dropped by
// construction). grad_v is k x D, rows matching s.v; the result is
// (H*W) x D.
//
// With P = V^T gradV (gradV zero-padded past column k) and
// K_ij = 1 / (sigma_i^2 - sigma_j^2) off the diagonal, the gradient is
//   U Sigma (K o (P^T - P)) V^T                          [coupling inside the spectrum]
// + U Sigma^-1 gradV^T (I - V V^T)   when H*W <= D       [null-space coupling]
// over the full spectrum r = min(H*W, D). Near-degenerate pairs have the
// denominator clamped to 1e-6 * sigma_1^2, matching the documented policy.
template <class Scalar>
Matrix<Scalar> svd_backward(const TruncatedSvd<Scalar>& s, const Matrix<Scalar>& grad_v) {
  const Eigen::Index r = s.sigma_full.size();
  const Eigen::Index n = s.cols, mr = s.rows;
  if (r != std::min(mr, n)) {
    throw std::invalid_argument("svd_backward: decomposition lacks the full-spectrum backward cache");
  }
  if (grad_v.rows() != s.rank || grad_v.cols() != n) {
    throw std::invalid_argument("svd_backward: grad_v must be " + std::to_string(s.rank) + "x" +
                                std::to_string(n) + ", got " + std::to_string(grad_v.rows()) + "x" +
                                std::to_string(grad_v.cols()));
  }
  Matrix<Scalar> grad_v_ext = Matrix<Scalar>::Zero(n, r);
  grad_v_ext.leftCols(s.rank) = grad_v.transpose();

  const Vector<Scalar> lambda = s.sigma_full.array().square();
  const Scalar clamp = std::max(lambda(0) * Scalar(1e-6), Scalar(1e-30));
  Matrix<Scalar> coupling(r, r);
  const Matrix<Scalar> p = s.v_full.transpose() * grad_v_ext;
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < r; ++j) {
      if (i == j) {
        coupling(i, j) = 0;
        continue;
      }
      Scalar d = lambda(i) - lambda(j);
      if (std::abs(d) < clamp) d = d >= 0 ? clamp : -clamp;
      coupling(i, j) = (p(j, i) - p(i, j)) / d;
    }
  }
  Matrix<Scalar> grad_m = s.u_full * (s.sigma_full.asDiagonal() * coupling) * s.v_full.transpose();
  if (mr <= n) {
    const Scalar lead = s.sigma_full(0);
    Vector<Scalar> inv_sigma(r);
    for (Eigen::Index i = 0; i < r; ++i) {
      inv_sigma(i) = s.sigma_full(i) > lead * Scalar(1e-12) ? Scalar(1) / s.sigma_full(i) : Scalar(0);
    }
    grad_m.noalias() += s.u_full * inv_sigma.asDiagonal() * grad_v_ext.transpose() *
                        (Matrix<Scalar>::Identity(n, n) - s.v_full * s.v_full.transpose());
  }
  return grad_m;
}

}  // namespace svdd::linalg
