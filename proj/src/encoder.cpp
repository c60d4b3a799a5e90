// SPDX-License-Identifier: Apache-2.0
#include "tsanet/encoder.hpp"

#include <cmath>

namespace tsanet {

namespace {

ConvParam he_conv(Rng& rng, int64_t cout, int64_t cin, int64_t k, DType dt) {
  double std = std::sqrt(2.0 / static_cast<double>(cin * k * k));
  return ConvParam{Tensor::normal({cout, cin, k, k}, rng, std, dt, true),
                   Tensor::zeros({cout}, dt, true)};
}

}  // namespace

BranchParams init_branch_params(Rng& rng, DType dt) {
  BranchParams p;
  p.blocks[0] = he_conv(rng, 16, 3, 3, dt);
  p.blocks[1] = he_conv(rng, 16, 16, 3, dt);
  p.blocks[2] = he_conv(rng, 32, 16, 3, dt);
  p.blocks[3] = he_conv(rng, 64, 32, 3, dt);
  p.blocks[4] = he_conv(rng, 128, 64, 3, dt);
  return p;
}

EncoderParams init_encoder_params(Rng& rng, DType dt) {
  EncoderParams p;
  p.appearance = init_branch_params(rng, dt);
  p.motion = init_branch_params(rng, dt);
  for (int l = 0; l < 4; ++l) {
    int64_t c = kPyramidWidths[l];
    p.fusion[l] = he_conv(rng, c, 2 * c, 1, dt);
  }
  return p;
}

FeaturePyramid extract_pyramid(const Tensor& image, const EncoderParams& params,
                               Branch branch) {
  const auto& s = image.shape();
  if (s.size() != 4 || s[1] != 3)
    throw ShapeError("extract_pyramid: image must be [N,3,H,W], got " +
                     shape_str(s));
  if (s[2] % 32 != 0 || s[3] % 32 != 0)
    throw ValueError("extract_pyramid: H and W must be divisible by 32, got " +
                     shape_str(s));
  const BranchParams& bp =
      branch == Branch::appearance ? params.appearance : params.motion;
  FeaturePyramid pyr;
  Tensor x = image;
  for (int i = 0; i < 5; ++i) {
    x = relu(conv2d(x, bp.blocks[i].weight, bp.blocks[i].bias, 2, 1));
    if (i >= 1) pyr.levels.push_back(x);
  }
  return pyr;
}

FeaturePyramid fuse_appearance_motion(const FeaturePyramid& f_i,
                                      const FeaturePyramid& f_o,
                                      const EncoderParams& params) {
  if (f_i.levels.size() != 4 || f_o.levels.size() != 4)
    throw ValueError("fuse_appearance_motion: pyramids must have 4 levels");
  FeaturePyramid out;
  for (int l = 0; l < 4; ++l) {
    if (f_i.levels[l].shape() != f_o.levels[l].shape())
      throw ShapeError("fuse_appearance_motion: level " + std::to_string(l) +
                       " shape mismatch: " + shape_str(f_i.levels[l].shape()) +
                       " vs " + shape_str(f_o.levels[l].shape()));
    Tensor cat = concat({f_i.levels[l], f_o.levels[l]}, 1);
    out.levels.push_back(relu(
        conv2d(cat, params.fusion[l].weight, params.fusion[l].bias, 1, 0)));
  }
  return out;
}

}  // namespace tsanet
