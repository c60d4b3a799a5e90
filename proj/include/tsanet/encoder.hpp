// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "tsanet/ops.hpp"
#include "tsanet/tensor.hpp"

namespace tsanet {

inline constexpr std::array<int64_t, 4> kPyramidWidths = {16, 32, 64, 128};

/// Per-frame features at 4 scales; level l (1-based) has stride 2^(l+1),
/// i.e. spatial extents H/4, H/8, H/16, H/32.
struct FeaturePyramid {
  std::vector<Tensor> levels;  // exactly 4, each [N, C_l, H_l, W_l]
};

struct ConvParam {
  Tensor weight;
  Tensor bias;
};

/// One encoder branch: two stride-2 blocks to reach stride 4, then one
/// stride-2 block per further level. All 3x3, relu after each.
struct BranchParams {
  std::array<ConvParam, 5> blocks;  // 3->16, 16->16, 16->32, 32->64, 64->128
};

enum class Branch { appearance, motion };

struct EncoderParams {
  BranchParams appearance;
  BranchParams motion;
  std::array<ConvParam, 4> fusion;  // per level: 1x1, 2*C_l -> C_l
};

BranchParams init_branch_params(Rng& rng, DType dt);
EncoderParams init_encoder_params(Rng& rng, DType dt);

/// image [N,3,H,W] with H, W divisible by 32 -> 4-level pyramid.
FeaturePyramid extract_pyramid(const Tensor& image, const EncoderParams& params,
                               Branch branch);

/// Per level: channel concat, 1x1 conv back to C_l, relu.
FeaturePyramid fuse_appearance_motion(const FeaturePyramid& f_i,
                                      const FeaturePyramid& f_o,
                                      const EncoderParams& params);

}  // namespace tsanet
