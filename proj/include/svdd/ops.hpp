#pragma once

#include <cstdint>
#include <vector>

#include "svdd/tensor.hpp"

namespace svdd::autograd {

enum class Padding { kSame, kValid };

// Elementwise. add() also accepts a right operand whose shape is a trailing
// suffix of the left one (bias broadcast); its gradient sums over the
// broadcast leading dims.
Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& a, double c);
Tensor exp(Graph& g, const Tensor& a);
Tensor relu(Graph& g, const Tensor& a);

Tensor reshape(Graph& g, const Tensor& a, Shape new_shape);

// a: [m x k], b: [k x n] -> [m x n]
Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);

// x: [N x H x W x Cin], w: [Kh x Kw x Cin x Cout], stride >= 1.
Tensor conv2d(Graph& g, const Tensor& x, const Tensor& w, int stride, Padding padding);

// x: [N x H x W x C]; window/stride over the spatial dims.
Tensor maxpool2d(Graph& g, const Tensor& x, int window, int stride);

// logits: [N x C]; labels[i] in [0, C) or -1 for unlabeled (contributes
// nothing). Returns the mean cross-entropy over labeled rows, 0 if none.
Tensor softmax_cross_entropy(Graph& g, const Tensor& logits, const std::vector<int>& labels);

// Scalar sqrt(sum of squares); gradient at the origin is defined as 0.
Tensor l2_norm(Graph& g, const Tensor& a);

// View of sample `n` of a batched tensor [N x ...] -> [...]; backward
// scatters into the batch gradient.
Tensor slice_batch(Graph& g, const Tensor& x, std::int64_t n);

// Output spatial size for one conv/pool dim.
std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride, Padding padding);

}  // namespace svdd::autograd
