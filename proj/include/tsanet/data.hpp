// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tsanet/tensor.hpp"

namespace tsanet {

/// One video: frames, 3-channel-encoded flows and binary masks, all at the
/// same resolution (divisible by 32).
struct FrameSequence {
  std::string name;
  std::vector<Tensor> frames;  // [3,H,W] in [0,1]
  std::vector<Tensor> flows;   // [3,H,W] encoded, see flow_to_rgb
  std::vector<Tensor> masks;   // [H,W] in {0,1}
  double max_mag = 1.0;

  int64_t size() const { return static_cast<int64_t>(frames.size()); }
  int64_t height() const { return frames.at(0).shape()[1]; }
  int64_t width() const { return frames.at(0).shape()[2]; }
};

enum class ShapeType { disk, rectangle, blob };

struct SyntheticConfig {
  int resolution = 64;  // square frames, divisible by 32
  int n_frames = 8;     // >= 3
  ShapeType shape = ShapeType::disk;
  double min_speed = 1.0;  // px/frame; draws are integer-valued
  double max_speed = 2.0;
  uint64_t bg_seed = 0;  // 0 derives the texture stream from the main seed
  bool occluder = false;
  int distractors = 0;
};

/// One textured moving object over a static textured background, optional
/// static distractors and an occluding bar. Flow is analytic ground truth
/// (zero background, object displacement on visible object pixels; the last
/// frame reuses the previous displacement). Deterministic in (cfg, seed).
FrameSequence generate_synthetic_sequence(const SyntheticConfig& cfg,
                                          uint64_t seed);

/// channel0 = clamp(dx/max_mag,-1,1)/2+0.5, channel1 likewise for dy,
/// channel2 = clamp(|(dx,dy)|/max_mag,0,1).
Tensor flow_to_rgb(const Tensor& dx, const Tensor& dy, double max_mag);

/// Inverse of flow_to_rgb within clamp range; returns (dx, dy).
std::pair<Tensor, Tensor> flow_rgb_to_xy(const Tensor& rgb, double max_mag);

struct AffineJitter {
  double scale = 1.0;
  double tx = 0.0;  // pixels
  double ty = 0.0;
};

/// Three frames obtained by warping a static image/mask by per-frame affine
/// jitters (scale about the image center plus translation); flows are the
/// analytic affine displacement fields.
FrameSequence pseudo_video_from_jitters(const Tensor& image, const Tensor& mask,
                                        const std::array<AffineJitter, 3>& jit,
                                        const std::string& name);

/// Seeded jitters: translation within 5% of each extent, scale in
/// [0.95, 1.05]; the first frame is the untouched image.
FrameSequence image_to_pseudo_video(const Tensor& image, const Tensor& mask,
                                    uint64_t seed);

/// Layout: <dir>/{frames,flows,masks}/%05d.png plus meta.txt. Frames and
/// flows are 8-bit RGB, masks 8-bit gray {0,255}.
void save_sequence(const FrameSequence& seq, const std::filesystem::path& dir);
FrameSequence load_sequence(const std::filesystem::path& dir);

/// Loads every sequence subdirectory under root. A root holding
/// images/*.png + masks/*.png instead is treated as a static-saliency set:
/// each image becomes a 3-frame pseudo-video (seeded).
std::vector<FrameSequence> load_dataset(const std::filesystem::path& root,
                                        uint64_t pseudo_seed = 0);

/// Round-robin across datasets switching every `switch_every` draws;
/// sequences shuffle per epoch within each dataset; the window index t is
/// drawn uniformly. Deterministic in seed.
class JointSampler {
 public:
  JointSampler(std::vector<const std::vector<FrameSequence>*> datasets,
               int switch_every, uint64_t seed);

  struct Draw {
    const FrameSequence* seq;
    int t;
  };
  Draw next();

 private:
  std::vector<const std::vector<FrameSequence>*> datasets_;
  std::vector<std::vector<int>> order_;
  std::vector<size_t> cursor_;
  int switch_every_;
  int active_ = 0;
  int draws_in_active_ = 0;
  Rng rng_;
};

// Plain (untracked) resampling for multi-scale training inputs.
Tensor resize_bilinear_chw(const Tensor& t, int out_h, int out_w);
Tensor resize_nearest_hw(const Tensor& t, int out_h, int out_w);

}  // namespace tsanet
