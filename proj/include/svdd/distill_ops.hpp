#pragma once

#include "svdd/distill.hpp"
#include "svdd/ops.hpp"
#include "svdd/tensor.hpp"

namespace svdd::distill {

// Differentiable pieces of the student path. Gradients flow through the
// values of the selected singular vectors; the alignment choice itself is a
// constant of the backward pass.

// m: [(H*W) x D] -> top-`rank` right singular vectors as [rank x D].
// Backward routes grad_V through the custom SVD gradient (V-only).
autograd::Tensor svd_right_vectors(autograd::Graph& g, const autograd::Tensor& m, int rank);

// v: [(k+1) x D] -> [k x D]; row i = scales[i] * signs[i] * v[indices[i]].
autograd::Tensor select_scale_rows(autograd::Graph& g, const autograd::Tensor& v,
                                   const std::vector<int>& indices, const std::vector<double>& signs,
                                   const std::vector<double>& scales);

// front: [k x D_F], back: [k x D_B] -> [k x D_F x D_B] Gaussian-RBF volume.
autograd::Tensor rbf_correlation(autograd::Graph& g, const autograd::Tensor& front,
                                 const autograd::Tensor& back, double beta);

// Composed student tap: ffm/bfm are [H x W x D] tensors (one sample). Rank
// is k+1 internally; the result is the [k x D_F x D_B] student DFV,
// differentiable end-to-end back to the feature maps.
autograd::Tensor student_dfv(autograd::Graph& g, const autograd::Tensor& ffm,
                             const autograd::Tensor& bfm, int k, double beta,
                             const TeacherTapRef& ref);

}  // namespace svdd::distill
