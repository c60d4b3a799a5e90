// SPDX-License-Identifier: Apache-2.0
#include "tsanet/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

namespace tsanet {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

ImageU8 read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open PNG for reading: " + path.string());

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed for " + path.string());
  }

  ImageU8 img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to decode PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = static_cast<int>(png_get_channels(png, info));
  if (img.channels != 1 && img.channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported PNG channel count in " + path.string());
  }
  img.pixels.resize(static_cast<size_t>(img.width) * img.height * img.channels);
  rows.resize(static_cast<size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[y] = img.pixels.data() +
              static_cast<size_t>(y) * img.width * img.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::filesystem::path& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ValueError("write_png: channels must be 1 or 3");
  if (img.pixels.size() !=
      static_cast<size_t>(img.width) * img.height * img.channels)
    throw ValueError("write_png: pixel buffer size mismatch");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open PNG for writing: " + path.string());

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed for " + path.string());
  }
  std::vector<png_bytep> rows(static_cast<size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(
        img.pixels.data() + static_cast<size_t>(y) * img.width * img.channels);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to encode PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageU8 tensor_to_rgb8(const Tensor& t) {
  const auto& s = t.shape();
  if (s.size() != 3 || s[0] != 3)
    throw ShapeError("tensor_to_rgb8: expected [3,H,W], got " + shape_str(s));
  ImageU8 img;
  img.height = static_cast<int>(s[1]);
  img.width = static_cast<int>(s[2]);
  img.channels = 3;
  img.pixels.resize(static_cast<size_t>(img.width) * img.height * 3);
  int64_t hw = s[1] * s[2];
  for (int64_t i = 0; i < hw; ++i)
    for (int64_t c = 0; c < 3; ++c) {
      double v = std::clamp(t.data()[c * hw + i], 0.0, 1.0);
      img.pixels[static_cast<size_t>(i * 3 + c)] =
          static_cast<uint8_t>(std::lround(v * 255.0));
    }
  return img;
}

Tensor rgb8_to_tensor(const ImageU8& img, DType dt) {
  if (img.channels != 3)
    throw ValueError("rgb8_to_tensor: expected a 3-channel image");
  int64_t h = img.height, w = img.width;
  std::vector<double> vals(static_cast<size_t>(3 * h * w));
  for (int64_t i = 0; i < h * w; ++i)
    for (int64_t c = 0; c < 3; ++c)
      vals[static_cast<size_t>(c * h * w + i)] =
          img.pixels[static_cast<size_t>(i * 3 + c)] / 255.0;
  return Tensor::from_data({3, h, w}, std::move(vals), dt);
}

ImageU8 mask_to_gray8(const Tensor& mask) {
  const auto& s = mask.shape();
  if (s.size() != 2)
    throw ShapeError("mask_to_gray8: expected [H,W], got " + shape_str(s));
  ImageU8 img;
  img.height = static_cast<int>(s[0]);
  img.width = static_cast<int>(s[1]);
  img.channels = 1;
  img.pixels.resize(static_cast<size_t>(img.width) * img.height);
  for (int64_t i = 0; i < mask.numel(); ++i) {
    double v = mask.data()[i];
    if (v != 0.0 && v != 1.0)
      throw ValueError("mask_to_gray8: mask must be binary");
    img.pixels[static_cast<size_t>(i)] = v != 0.0 ? 255 : 0;
  }
  return img;
}

Tensor gray8_to_mask(const ImageU8& img, const std::filesystem::path& origin,
                     DType dt) {
  if (img.channels != 1)
    throw IoError("mask file is not grayscale: " + origin.string());
  std::vector<double> vals(img.pixels.size());
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    uint8_t p = img.pixels[i];
    if (p != 0 && p != 255)
      throw IoError("mask file is not binary {0,255}: " + origin.string() +
                    " (value " + std::to_string(static_cast<int>(p)) + ")");
    vals[i] = p == 255 ? 1.0 : 0.0;
  }
  return Tensor::from_data({img.height, img.width}, std::move(vals), dt);
}

}  // namespace tsanet
