// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "tsanet/tensor.hpp"

namespace tsanet {

// Differentiable operation vocabulary. Every op is a pure function of its
// inputs; when recording is enabled and any input requires gradients, the op
// registers a backward rule on the active tape. Binary elementwise ops accept
// equal-rank inputs where each axis extent either matches or is 1
// (broadcast); gradients sum-reduce over broadcast axes.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);  // gradient at exactly 0 is 0
Tensor sigmoid(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
Tensor reshape(const Tensor& a, std::vector<int64_t> shape);
Tensor transpose2d(const Tensor& a);

/// [M,K] x [K,P] -> [M,P].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Cross-correlation with zero padding. input [N,Cin,H,W], weight
/// [Cout,Cin,kh,kw] (kh, kw odd), optional bias [Cout] (pass a
/// default-constructed Tensor for none).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int pad);

/// Bilinear lookup at fractional pixel coordinates. input [N,C,H,W], points
/// [N,P,2] as (x,y) in pixel units -> [N,C,P]. Corners outside
/// [0,W-1]x[0,H-1] contribute zero. Differentiable in input and points.
Tensor grid_sample_bilinear(const Tensor& input, const Tensor& points);

/// feat [C,H,W] gathered at P integer cells -> [P,C]. Backward scatter-adds.
Tensor gather_pixels(const Tensor& feat, const std::vector<int64_t>& rows,
                     const std::vector<int64_t>& cols);

/// Sum of all elements -> shape [1].
Tensor sum(const Tensor& a);

/// Mean over all pixels of -log softmax(logits)[target]. logits [N,2,H,W],
/// target [N,H,W] with values in {0,1}. Softmax is max-stabilized.
Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& target);

/// Bilinear resize with half-pixel centers and border clamping.
/// x [N,C,h,w] -> [N,C,out_h,out_w]. Differentiable in x.
Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w);

/// Raw relative coordinates followed by sin/cos Fourier features:
/// r [P,2] -> [P, 2 + 4*n_freq], frequencies 2^j * pi for j = 0..n_freq-1.
Tensor positional_embed(const Tensor& r, int n_freq);

}  // namespace tsanet
