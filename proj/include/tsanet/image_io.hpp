// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tsanet/tensor.hpp"

namespace tsanet {

/// Interleaved 8-bit image, 1 (gray) or 3 (RGB) channels.
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;  // height * width * channels
};

ImageU8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageU8& img);

/// [3,H,W] tensor in [0,1] <-> RGB bytes (round(v*255) on write).
ImageU8 tensor_to_rgb8(const Tensor& t);
Tensor rgb8_to_tensor(const ImageU8& img, DType dt = DType::f32);

/// [H,W] binary tensor <-> gray bytes {0,255}.
ImageU8 mask_to_gray8(const Tensor& mask);
Tensor gray8_to_mask(const ImageU8& img, const std::filesystem::path& origin,
                     DType dt = DType::f32);

}  // namespace tsanet
