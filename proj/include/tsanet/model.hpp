// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "tsanet/data.hpp"
#include "tsanet/encoder.hpp"
#include "tsanet/sad.hpp"
#include "tsanet/taf.hpp"

namespace tsanet {

/// Fixed-upsampling ablation decoder: per-level 1x1 logit heads, bilinear
/// upsample, summed across levels.
struct BilinearDecoderParams {
  std::array<ConvParam, 4> heads;  // C_l -> 2
};

struct ModelParams {
  EncoderParams encoder;
  TafParams taf;
  SadParams sad;
  BilinearDecoderParams bilinear;
};

struct ModelFlags {
  bool taf_enabled = true;
  bool sad_enabled = true;
  bool target_residual = false;
};

ModelParams init_model_params(uint64_t seed, DType dt = DType::f32);

/// Stable registry of every parameter; the order defines the checkpoint
/// layout and the optimizer update order.
std::vector<std::pair<std::string, Tensor*>> named_params(ModelParams& params);

struct Window {
  Tensor frame_prev, frame_tgt, frame_next;  // [1,3,H,W]
  Tensor flow_prev, flow_tgt, flow_next;     // [1,3,H,W]
};

/// Gathers the clamped (t-1, t, t+1) window, optionally resampled to a
/// square training scale (0 keeps the native resolution). Also returns the
/// target mask [1,H,W] matching the window resolution.
std::pair<Window, Tensor> make_window(const FrameSequence& seq, int t,
                                      int scale = 0);

/// Dual-branch encode + fuse per frame, temporal alignment across the
/// window (or the target's own pyramid when disabled), then the decoder.
/// Returns logits [1,2,out_h,out_w].
Tensor forward_segment(const ModelParams& params, const ModelFlags& flags,
                       const Window& window, int out_h, int out_w);

}  // namespace tsanet
