// SPDX-License-Identifier: Apache-2.0
#include "tsanet/taf.hpp"

#include <cmath>

#include "tsanet/ops.hpp"

namespace tsanet {

namespace {

ConvParam he_conv(Rng& rng, int64_t cout, int64_t cin, int64_t k, DType dt) {
  double std = std::sqrt(2.0 / static_cast<double>(cin * k * k));
  return ConvParam{Tensor::normal({cout, cin, k, k}, rng, std, dt, true),
                   Tensor::zeros({cout}, dt, true)};
}

/// Constant sampling points for tap i: (ox + gx, oy + gy) per position.
Tensor tap_base_points(int64_t h, int64_t w, int tap, DType dt) {
  int64_t gy = tap / 3 - 1, gx = tap % 3 - 1;
  std::vector<double> pts;
  pts.reserve(static_cast<size_t>(h * w * 2));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      pts.push_back(static_cast<double>(x + gx));
      pts.push_back(static_cast<double>(y + gy));
    }
  return Tensor::from_data({1, h * w, 2}, std::move(pts), dt);
}

}  // namespace

TafParams init_taf_params(Rng& rng, DType dt) {
  TafParams p;
  for (int l = 0; l < 4; ++l) {
    int64_t c = kPyramidWidths[l];
    // Zero-initialized prediction head: training starts from plain
    // convolution (offsets 0, masks 0.5).
    p.levels[l].predict =
        ConvParam{Tensor::zeros({3 * kDeformTaps, 2 * c, 3, 3}, dt, true),
                  Tensor::zeros({3 * kDeformTaps}, dt, true)};
    p.levels[l].deform_w = he_conv(rng, c, c, 3, dt).weight;
    p.levels[l].deform_b = Tensor::zeros({c}, dt, true);
    p.levels[l].aggregate = he_conv(rng, c, c, 3, dt);
  }
  return p;
}

OffsetField predict_offsets_masks(const Tensor& f_adj, const Tensor& f_tgt,
                                  const TafLevelParams& params) {
  if (f_adj.shape() != f_tgt.shape())
    throw ShapeError("predict_offsets_masks: feature shapes differ: " +
                     shape_str(f_adj.shape()) + " vs " +
                     shape_str(f_tgt.shape()));
  Tensor cat = concat({f_adj, f_tgt}, 1);
  Tensor raw = conv2d(cat, params.predict.weight, params.predict.bias, 1, 1);
  OffsetField field;
  field.offsets = slice(raw, 1, 0, 2 * kDeformTaps);
  field.masks = sigmoid(slice(raw, 1, 2 * kDeformTaps, kDeformTaps));
  return field;
}

Tensor deformable_align(const Tensor& f_adj, const OffsetField& field,
                        const TafLevelParams& params) {
  const auto& s = f_adj.shape();
  if (s.size() != 4)
    throw ShapeError("deformable_align: features must be [N,C,H,W], got " +
                     shape_str(s));
  int64_t n = s[0], c = s[1], h = s[2], w = s[3];
  const auto& so = field.offsets.shape();
  const auto& sm = field.masks.shape();
  if (so != std::vector<int64_t>{n, 2 * kDeformTaps, h, w})
    throw ShapeError("deformable_align: offsets shape " + shape_str(so) +
                     " inconsistent with features " + shape_str(s));
  if (sm != std::vector<int64_t>{n, kDeformTaps, h, w})
    throw ShapeError("deformable_align: masks shape " + shape_str(sm) +
                     " inconsistent with features " + shape_str(s));
  int64_t p = h * w;
  DType dt = f_adj.dtype();

  Tensor acc;
  for (int tap = 0; tap < kDeformTaps; ++tap) {
    // Tap sampling points: regular grid offset plus the learned residual.
    Tensor dx = reshape(slice(field.offsets, 1, 2 * tap, 1), {n, p, 1});
    Tensor dy = reshape(slice(field.offsets, 1, 2 * tap + 1, 1), {n, p, 1});
    Tensor points = add(tap_base_points(h, w, tap, dt), concat({dx, dy}, 2));
    Tensor sampled = grid_sample_bilinear(f_adj, points);  // [N,C,P]
    Tensor m = reshape(slice(field.masks, 1, tap, 1), {n, 1, p});
    Tensor modulated = reshape(mul(sampled, m), {n, c, p, 1});
    // Per-tap channel mixing is a 1x1 conv with this tap's weight slice.
    Tensor wt = reshape(
        slice(slice(params.deform_w, 2, tap / 3, 1), 3, tap % 3, 1),
        {c, c, 1, 1});
    Tensor term = conv2d(modulated, wt, Tensor(), 1, 0);
    acc = acc.defined() ? add(acc, term) : term;
  }
  acc = add(acc, reshape(params.deform_b, {1, c, 1, 1}));
  return reshape(acc, {n, c, h, w});
}

Tensor aggregate_aligned(const Tensor& a_prev, const Tensor& a_next,
                         const TafLevelParams& params) {
  if (a_prev.shape() != a_next.shape())
    throw ShapeError("aggregate_aligned: shapes differ: " +
                     shape_str(a_prev.shape()) + " vs " +
                     shape_str(a_next.shape()));
  Tensor summed = add(a_prev, a_next);
  return relu(
      conv2d(summed, params.aggregate.weight, params.aggregate.bias, 1, 1));
}

FeaturePyramid taf_forward(const FeaturePyramid& pyr_prev,
                           const FeaturePyramid& pyr_tgt,
                           const FeaturePyramid& pyr_next,
                           const TafParams& params, bool target_residual) {
  if (pyr_prev.levels.size() != 4 || pyr_tgt.levels.size() != 4 ||
      pyr_next.levels.size() != 4)
    throw ValueError("taf_forward: pyramids must have 4 levels");
  FeaturePyramid out;
  for (int l = 0; l < 4; ++l) {
    const TafLevelParams& lp = params.levels[l];
    const Tensor& tgt = pyr_tgt.levels[l];
    OffsetField field_prev = predict_offsets_masks(pyr_prev.levels[l], tgt, lp);
    Tensor a_prev = deformable_align(pyr_prev.levels[l], field_prev, lp);
    OffsetField field_next = predict_offsets_masks(pyr_next.levels[l], tgt, lp);
    Tensor a_next = deformable_align(pyr_next.levels[l], field_next, lp);
    Tensor agg = aggregate_aligned(a_prev, a_next, lp);
    out.levels.push_back(target_residual ? add(agg, tgt) : agg);
  }
  return out;
}

}  // namespace tsanet
