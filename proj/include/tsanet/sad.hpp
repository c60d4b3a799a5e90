// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>

#include "tsanet/encoder.hpp"
#include "tsanet/tensor.hpp"

namespace tsanet {

inline constexpr int kEmbedFreqs = 6;
inline constexpr int kSadHidden = 128;
/// Query points are decoded in chunks of at most this many rows.
inline constexpr int64_t kQueryChunk = 4096;

/// Width of one level's decoder slice: features plus embedded coordinates.
inline constexpr int64_t sad_level_width(int level) {
  return kPyramidWidths[level] + 4 * kEmbedFreqs + 2;
}
inline constexpr int64_t sad_input_width() {
  return sad_level_width(0) + sad_level_width(1) + sad_level_width(2) +
         sad_level_width(3);
}

/// 3-layer MLP decoding concatenated multi-scale features into 2 logits.
struct SadParams {
  Tensor w1, b1;  // [344,128], [128]
  Tensor w2, b2;  // [128,128], [128]
  Tensor w3, b3;  // [128,2],   [2]
};

SadParams init_sad_params(Rng& rng, DType dt);

/// Row-major pixel-center coordinates in [-1,1]^2: x = (j+0.5)/w*2-1,
/// y = (i+0.5)/h*2-1. Shape [h*w, 2].
Tensor normalize_coords(int h, int w, DType dt = DType::f32);

/// Nearest feature cell by Euclidean distance between normalized centers;
/// ties break toward the smaller row, then smaller column. Returns the
/// gathered features [P,C] (gradients flow through) and the matched cell
/// centers [P,2] (constant).
std::pair<Tensor, Tensor> nearest_feature(const Tensor& query,
                                          const Tensor& level_feat);

/// Eq-style continuous decode: per query, concat over levels of
/// [z_a^l || embed(x_c - x_a^l)], then the MLP. query [P,2] -> logits [P,2].
Tensor decode_continuous(const Tensor& query, const FeaturePyramid& aligned,
                         const SadParams& params);

/// Resolution-free mask head: decodes every output pixel center in chunks.
/// aligned levels are [1,C,H_l,W_l]; result is [1,2,out_h,out_w].
Tensor predict_mask(const FeaturePyramid& aligned, int out_h, int out_w,
                    const SadParams& params);

}  // namespace tsanet
