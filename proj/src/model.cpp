// SPDX-License-Identifier: Apache-2.0
#include "tsanet/model.hpp"

#include <cmath>

#include "tsanet/ops.hpp"

namespace tsanet {

ModelParams init_model_params(uint64_t seed, DType dt) {
  Rng rng(mix_seed(seed, 10));
  ModelParams p;
  p.encoder = init_encoder_params(rng, dt);
  p.taf = init_taf_params(rng, dt);
  p.sad = init_sad_params(rng, dt);
  for (int l = 0; l < 4; ++l) {
    int64_t c = kPyramidWidths[l];
    // Small heads keep initial logits near zero, like the SAD head.
    p.bilinear.heads[l] =
        ConvParam{Tensor::normal({2, c, 1, 1}, rng, 0.01, dt, true),
                  Tensor::zeros({2}, dt, true)};
  }
  return p;
}

std::vector<std::pair<std::string, Tensor*>> named_params(ModelParams& p) {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto add = [&](const std::string& name, Tensor& t) {
    out.emplace_back(name, &t);
  };
  auto add_branch = [&](const std::string& prefix, BranchParams& b) {
    for (int i = 0; i < 5; ++i) {
      add(prefix + ".b" + std::to_string(i) + ".w", b.blocks[i].weight);
      add(prefix + ".b" + std::to_string(i) + ".b", b.blocks[i].bias);
    }
  };
  add_branch("enc.app", p.encoder.appearance);
  add_branch("enc.mot", p.encoder.motion);
  for (int l = 0; l < 4; ++l) {
    std::string lv = "enc.fuse.l" + std::to_string(l + 1);
    add(lv + ".w", p.encoder.fusion[l].weight);
    add(lv + ".b", p.encoder.fusion[l].bias);
  }
  for (int l = 0; l < 4; ++l) {
    std::string lv = "taf.l" + std::to_string(l + 1);
    add(lv + ".pred.w", p.taf.levels[l].predict.weight);
    add(lv + ".pred.b", p.taf.levels[l].predict.bias);
    add(lv + ".def.w", p.taf.levels[l].deform_w);
    add(lv + ".def.b", p.taf.levels[l].deform_b);
    add(lv + ".agg.w", p.taf.levels[l].aggregate.weight);
    add(lv + ".agg.b", p.taf.levels[l].aggregate.bias);
  }
  add("sad.fc1.w", p.sad.w1);
  add("sad.fc1.b", p.sad.b1);
  add("sad.fc2.w", p.sad.w2);
  add("sad.fc2.b", p.sad.b2);
  add("sad.fc3.w", p.sad.w3);
  add("sad.fc3.b", p.sad.b3);
  for (int l = 0; l < 4; ++l) {
    std::string lv = "dec.l" + std::to_string(l + 1);
    add(lv + ".w", p.bilinear.heads[l].weight);
    add(lv + ".b", p.bilinear.heads[l].bias);
  }
  return out;
}

std::pair<Window, Tensor> make_window(const FrameSequence& seq, int t,
                                      int scale) {
  if (seq.size() < 1) throw ValueError("make_window: empty sequence");
  if (t < 0 || t >= seq.size())
    throw ValueError("make_window: frame index " + std::to_string(t) +
                     " out of range for " + std::to_string(seq.size()) +
                     " frames");
  int prev = std::max(t - 1, 0);
  int next = std::min(t + 1, static_cast<int>(seq.size()) - 1);

  auto prep = [&](const Tensor& chw) {
    Tensor x = chw;
    if (scale > 0 && (chw.shape()[1] != scale || chw.shape()[2] != scale))
      x = resize_bilinear_chw(chw, scale, scale);
    const auto& s = x.shape();
    return reshape(x, {1, s[0], s[1], s[2]});
  };
  Window w;
  w.frame_prev = prep(seq.frames[prev]);
  w.frame_tgt = prep(seq.frames[t]);
  w.frame_next = prep(seq.frames[next]);
  w.flow_prev = prep(seq.flows[prev]);
  w.flow_tgt = prep(seq.flows[t]);
  w.flow_next = prep(seq.flows[next]);

  Tensor mask = seq.masks[t];
  if (scale > 0 && (mask.shape()[0] != scale || mask.shape()[1] != scale))
    mask = resize_nearest_hw(mask, scale, scale);
  Tensor target = reshape(mask, {1, mask.shape()[0], mask.shape()[1]});
  return {std::move(w), std::move(target)};
}

namespace {

Tensor bilinear_decode(const FeaturePyramid& pyr,
                       const BilinearDecoderParams& params, int out_h,
                       int out_w) {
  Tensor acc;
  for (int l = 0; l < 4; ++l) {
    Tensor logits = conv2d(pyr.levels[l], params.heads[l].weight,
                           params.heads[l].bias, 1, 0);
    Tensor up = upsample_bilinear(logits, out_h, out_w);
    acc = acc.defined() ? add(acc, up) : up;
  }
  return acc;
}

}  // namespace

Tensor forward_segment(const ModelParams& params, const ModelFlags& flags,
                       const Window& window, int out_h, int out_w) {
  const auto& s = window.frame_tgt.shape();
  for (const Tensor* t :
       {&window.frame_prev, &window.frame_next, &window.flow_prev,
        &window.flow_tgt, &window.flow_next})
    if (t->shape() != s)
      throw ValueError("forward_segment: window tensors must share one "
                       "resolution, got " +
                       shape_str(t->shape()) + " vs " + shape_str(s));

  auto encode = [&](const Tensor& frame, const Tensor& flow) {
    FeaturePyramid fi = extract_pyramid(frame, params.encoder,
                                        Branch::appearance);
    FeaturePyramid fo = extract_pyramid(flow, params.encoder, Branch::motion);
    return fuse_appearance_motion(fi, fo, params.encoder);
  };
  FeaturePyramid fused_tgt = encode(window.frame_tgt, window.flow_tgt);
  FeaturePyramid aligned;
  if (flags.taf_enabled) {
    FeaturePyramid fused_prev = encode(window.frame_prev, window.flow_prev);
    FeaturePyramid fused_next = encode(window.frame_next, window.flow_next);
    aligned = taf_forward(fused_prev, fused_tgt, fused_next, params.taf,
                          flags.target_residual);
  } else {
    aligned = fused_tgt;
  }
  return flags.sad_enabled
             ? predict_mask(aligned, out_h, out_w, params.sad)
             : bilinear_decode(aligned, params.bilinear, out_h, out_w);
}

}  // namespace tsanet
