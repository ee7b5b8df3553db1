#pragma once

#include "fseg/tensor.hpp"

namespace fseg {

// 2-D cross-correlation with zero padding, stride 1.
// input [N,C,H,W], weight [F,C,k,k] (k odd), bias [F].
// Output [N,F,H+2p-k+1,W+2p-k+1]; p = k/2 keeps the spatial size.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int padding);

// 2x2 max pooling, stride 2. Ties route gradient to the first maximum in
// row-major scan order.
Tensor maxpool2(const Tensor& input);

// Nearest-neighbour 2x upsampling.
Tensor upsample_nearest2(const Tensor& input);

// Concatenate along the channel axis of [N,C,H,W] tensors.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Softmax over the channel axis of [N,R,H,W], computed with per-pixel max
// subtraction.
Tensor softmax_channels(const Tensor& a);

// Mean over pixels of -sum_r q_r*log(max(p_r, 1e-12)); q is one-hot.
// p and q are [N,R,H,W]; the mean divides by N*H*W.
Tensor cross_entropy(const Tensor& p, const Tensor& q_onehot);

}  // namespace fseg
