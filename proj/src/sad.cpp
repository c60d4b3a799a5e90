// SPDX-License-Identifier: Apache-2.0
#include "tsanet/sad.hpp"

#include <cmath>

#include "tsanet/ops.hpp"

namespace tsanet {

namespace {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), reshape(b, {1, b.shape()[0]}));
}

/// Continuous cell coordinate of a normalized position: cell j covers
/// [j, j+1) in this unit, centers sit at j + 0.5.
int64_t nearest_cell(double coord, int64_t extent) {
  double u = (coord + 1.0) * 0.5 * static_cast<double>(extent);
  // Nearest center with midpoint ties resolved toward the smaller index.
  auto j = static_cast<int64_t>(std::ceil(u - 1.0));
  if (j < 0) j = 0;
  if (j >= extent) j = extent - 1;
  return j;
}

double cell_center(int64_t j, int64_t extent) {
  return (static_cast<double>(j) + 0.5) / static_cast<double>(extent) * 2.0 -
         1.0;
}

}  // namespace

SadParams init_sad_params(Rng& rng, DType dt) {
  SadParams p;
  int64_t in = sad_input_width();
  p.w1 = Tensor::normal({in, kSadHidden}, rng,
                        std::sqrt(2.0 / static_cast<double>(in)), dt, true);
  p.b1 = Tensor::zeros({kSadHidden}, dt, true);
  p.w2 = Tensor::normal({kSadHidden, kSadHidden}, rng,
                        std::sqrt(2.0 / static_cast<double>(kSadHidden)), dt,
                        true);
  p.b2 = Tensor::zeros({kSadHidden}, dt, true);
  // Small head keeps initial logits near zero.
  p.w3 = Tensor::normal({kSadHidden, 2}, rng, 0.01, dt, true);
  p.b3 = Tensor::zeros({2}, dt, true);
  return p;
}

Tensor normalize_coords(int h, int w, DType dt) {
  if (h < 1 || w < 1)
    throw ValueError("normalize_coords: extents must be >= 1");
  std::vector<double> pts;
  pts.reserve(static_cast<size_t>(h) * w * 2);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      pts.push_back((j + 0.5) / static_cast<double>(w) * 2.0 - 1.0);
      pts.push_back((i + 0.5) / static_cast<double>(h) * 2.0 - 1.0);
    }
  return Tensor::from_data({static_cast<int64_t>(h) * w, 2}, std::move(pts),
                           dt);
}

std::pair<Tensor, Tensor> nearest_feature(const Tensor& query,
                                          const Tensor& level_feat) {
  const auto& sq = query.shape();
  const auto& sf = level_feat.shape();
  if (sq.size() != 2 || sq[1] != 2)
    throw ShapeError("nearest_feature: query must be [P,2], got " +
                     shape_str(sq));
  if (sf.size() != 3)
    throw ShapeError("nearest_feature: level features must be [C,H,W], got " +
                     shape_str(sf));
  int64_t p = sq[0], hl = sf[1], wl = sf[2];
  std::vector<int64_t> rows(static_cast<size_t>(p)),
      cols(static_cast<size_t>(p));
  std::vector<double> centers(static_cast<size_t>(p) * 2);
  for (int64_t i = 0; i < p; ++i) {
    double qx = query.data()[i * 2 + 0];
    double qy = query.data()[i * 2 + 1];
    if (qx < -1.0 - 1e-9 || qx > 1.0 + 1e-9 || qy < -1.0 - 1e-9 ||
        qy > 1.0 + 1e-9)
      throw ValueError("nearest_feature: query outside [-1,1]^2 at point " +
                       std::to_string(i));
    cols[i] = nearest_cell(qx, wl);
    rows[i] = nearest_cell(qy, hl);
    centers[i * 2 + 0] = cell_center(cols[i], wl);
    centers[i * 2 + 1] = cell_center(rows[i], hl);
  }
  Tensor z = gather_pixels(level_feat, rows, cols);
  Tensor xa = Tensor::from_data({p, 2}, std::move(centers), query.dtype());
  return {z, xa};
}

Tensor decode_continuous(const Tensor& query, const FeaturePyramid& aligned,
                         const SadParams& params) {
  if (aligned.levels.size() != 4)
    throw ValueError("decode_continuous: expected a 4-level pyramid, got " +
                     std::to_string(aligned.levels.size()));
  std::vector<Tensor> parts;
  for (int l = 0; l < 4; ++l) {
    const auto& s = aligned.levels[l].shape();
    if (s.size() != 4 || s[0] != 1)
      throw ShapeError("decode_continuous: level " + std::to_string(l) +
                       " must be [1,C,H,W], got " + shape_str(s));
    Tensor feat = reshape(aligned.levels[l], {s[1], s[2], s[3]});
    auto [z, xa] = nearest_feature(query, feat);
    Tensor rel = sub(query, xa);
    parts.push_back(concat({z, positional_embed(rel, kEmbedFreqs)}, 1));
  }
  Tensor x = concat(parts, 1);
  Tensor h1 = relu(linear(x, params.w1, params.b1));
  Tensor h2 = relu(linear(h1, params.w2, params.b2));
  return linear(h2, params.w3, params.b3);
}

Tensor predict_mask(const FeaturePyramid& aligned, int out_h, int out_w,
                    const SadParams& params) {
  if (out_h < 1 || out_w < 1)
    throw ValueError("predict_mask: output extents must be >= 1");
  DType dt = aligned.levels.empty() ? DType::f32 : aligned.levels[0].dtype();
  Tensor coords = normalize_coords(out_h, out_w, dt);
  int64_t total = coords.shape()[0];
  std::vector<Tensor> chunks;
  for (int64_t start = 0; start < total; start += kQueryChunk) {
    int64_t len = std::min(kQueryChunk, total - start);
    Tensor q = slice(coords, 0, start, len);
    chunks.push_back(decode_continuous(q, aligned, params));
  }
  Tensor logits = chunks.size() == 1 ? chunks[0] : concat(chunks, 0);
  return reshape(transpose2d(logits), {1, 2, out_h, out_w});
}

}  // namespace tsanet
