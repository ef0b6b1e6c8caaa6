// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <vector>

namespace lava::views {

/// Planar (CHW) float image with values in [0, 1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  bool same_shape(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool operator==(const Image& o) const = default;
};

/// Axis-aligned source rectangle in pixel coordinates.
struct Rect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
  bool operator==(const Rect&) const = default;
};

/// Crops `r` out of `src` and resizes it to out_size x out_size with
/// bilinear sampling (pixel-center aligned). Identity when the rectangle is
/// the whole image and the size is unchanged.
Image crop_resize(const Image& src, const Rect& r, int out_size);

/// Binary PPM (P6, 3 channels) or PGM (P5, 1 channel), 8-bit.
void write_pnm(const Image& img, const std::filesystem::path& path);
Image read_pnm(const std::filesystem::path& path);

/// Rounds every value to the nearest 1/255 step, which is exactly what a
/// write/read cycle through an 8-bit file produces.
void quantize_8bit(Image& img);

}  // namespace lava::views
