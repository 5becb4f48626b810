#pragma once

// Differentiable primitives. Every function records a graph node when grad
// mode is on and at least one operand requires a gradient. Image tensors are
// laid out NCHW.

#include <initializer_list>
#include <vector>

#include "dust/tensor.hpp"

namespace dust {

/// Stride-1 cross-correlation. x [B,Ci,H,W], weight [Co,Ci,k,k], bias [Co] or
/// undefined. Output [B,Co,H+2p-k+1,W+2p-k+1].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, std::size_t padding);

/// Transposed convolution with a 2x2 kernel and stride 2: weight [Ci,Co,2,2],
/// output [B,Co,2H,2W].
template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                                const BasicTensor<T>& bias);

/// Bilinear x2 upsampling with half-pixel centres (align_corners = false).
template <typename T>
BasicTensor<T> upsample_bilinear2x(const BasicTensor<T>& x);

/// 2x2 max pooling, stride 2. Ties resolve to the first element in raster order.
template <typename T>
BasicTensor<T> max_pool2x2(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope = T(0.01));

/// Per-sample, per-channel normalisation over H*W with affine gamma/beta [C].
template <typename T>
BasicTensor<T> instance_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                             const BasicTensor<T>& beta, T eps = T(1e-5));

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Elementwise product.
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Concatenation along axis 1.
template <typename T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts);

/// sum_i coeffs[i] * terms[i] + constant, all terms of one shape.
template <typename T>
BasicTensor<T> linear_combination(const std::vector<BasicTensor<T>>& terms,
                                  const std::vector<T>& coeffs, T constant = T(0));

/// a * x + c.
template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& x, T a, T c) {
  return linear_combination<T>({x}, {a}, c);
}

/// Softmax along axis 1.
template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& x);

/// Sum over the listed axes (which are removed from the shape).
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x, const std::vector<std::size_t>& axes);

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x, const std::vector<std::size_t>& axes);

/// Reductions over every element; result has shape [1].
template <typename T>
BasicTensor<T> sum_all(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> mean_all(const BasicTensor<T>& x);

/// Constant [B,n,H,W] indicator tensor. Never carries a gradient.
template <typename T>
BasicTensor<T> one_hot(const LabelBatch& labels, std::size_t n_classes);

}  // namespace dust
