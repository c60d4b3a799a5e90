// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>

#include "tsanet/encoder.hpp"
#include "tsanet/tensor.hpp"

namespace tsanet {

inline constexpr int kDeformTaps = 9;  // 3x3 deformable kernel

/// Learned per-position sampling field for one pyramid level: pixel-unit
/// residual displacements (dx,dy) per tap plus sigmoid modulation masks.
struct OffsetField {
  Tensor offsets;  // [N, 2k, H, W]
  Tensor masks;    // [N, k, H, W], values in (0,1)
};

struct TafLevelParams {
  ConvParam predict;   // 3x3, 2*C -> 3k; zero-initialized
  Tensor deform_w;     // [C, C, 3, 3]
  Tensor deform_b;     // [C]
  ConvParam aggregate; // 3x3, C -> C
};

struct TafParams {
  std::array<TafLevelParams, 4> levels;
};

TafParams init_taf_params(Rng& rng, DType dt);

/// Conv over concat(adjacent, target); first 2k channels are raw offsets,
/// the last k pass through a sigmoid.
OffsetField predict_offsets_masks(const Tensor& f_adj, const Tensor& f_tgt,
                                  const TafLevelParams& params);

/// Modulated deformable convolution: samples f_adj at p + g_i + dp_i(p) per
/// tap, scales by m_i(p), convolves with the tap weights and adds bias.
Tensor deformable_align(const Tensor& f_adj, const OffsetField& field,
                        const TafLevelParams& params);

/// Sum over the two temporal directions, 3x3 conv, relu.
Tensor aggregate_aligned(const Tensor& a_prev, const Tensor& a_next,
                         const TafLevelParams& params);

/// Full per-level alignment of the previous/next pyramids onto the target.
/// With target_residual, the target's own features are added to the result.
FeaturePyramid taf_forward(const FeaturePyramid& pyr_prev,
                           const FeaturePyramid& pyr_tgt,
                           const FeaturePyramid& pyr_next,
                           const TafParams& params,
                           bool target_residual = false);

}  // namespace tsanet
