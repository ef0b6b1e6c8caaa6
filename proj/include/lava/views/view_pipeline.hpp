// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "lava/views/image.hpp"

namespace lava::views {

struct ScaleRange {
  double lo = 0.0;
  double hi = 1.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct Augmentations {
  bool flip = true;
  bool color_jitter = true;
  bool blur = true;
  bool solarize = true;

  static Augmentations none() { return {false, false, false, false}; }
};

/// Multi-crop layout. Defaults are the transfer-stage layout: six small
/// student crops, no small teacher crops, two large crops each, with the
/// teacher's large crops sampled independently of the student's.
struct CropConfig {
  int n_small_student = 6;
  int n_small_teacher = 0;
  int n_large_student = 2;
  int n_large_teacher = 2;
  ScaleRange global_scale{0.4, 1.0};
  ScaleRange local_scale{0.05, 0.4};
  int large_out_size = 32;
  int small_out_size = 16;
  Augmentations augment;
  /// Self-distillation layout: the teacher's large views are the student's
  /// large views (same crop id); n_large_teacher must equal n_large_student.
  bool share_large_crops = false;

  void validate() const;
};

/// Augmentation probabilities and strengths.
inline constexpr double kJitterProbability = 0.8;
inline constexpr double kJitterStrength = 0.4;
inline constexpr double kBlurProbability = 0.5;
inline constexpr double kSolarizeProbability = 0.2;
inline constexpr double kSolarizeThreshold = 0.5;
inline constexpr int kMaxCropAttempts = 10;

struct CropMeta {
  Rect source;
  double scale = 0.0;  // area fraction of the source image
  bool large = false;
  bool flipped = false;
  bool jittered = false;
  bool blurred = false;
  bool solarized = false;
  std::uint64_t seed = 0;
  int crop_id = 0;
};

struct View {
  Image image;
  CropMeta meta;
};

struct ViewSet {
  std::vector<View> student;  // large crops first, then small
  std::vector<View> teacher;  // large crops first, then small
};

/// Samples every crop and augmentation from `seed`; bit-exact reproducible.
/// Throws InputError when the image is smaller than an output size and
/// ConfigError for an empty or invalid config.
ViewSet generate_views(const Image& image, const CropConfig& config, std::uint64_t seed);

/// Random-resized-crop rectangle with area fraction inside `range`.
Rect sample_crop(int width, int height, const ScaleRange& range, std::uint64_t seed);

/// CSV rows "image,role,slot,crop_id,x,y,w,h,scale,large,flip,jitter,blur,solarize,seed".
void write_view_metadata_header(std::ostream& out);
void write_view_metadata(std::ostream& out, std::size_t image_index, const ViewSet& views);

}  // namespace lava::views
