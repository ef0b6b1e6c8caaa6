// SPDX-License-Identifier: Apache-2.0
#include "lava/views/view_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "lava/errors.hpp"
#include "lava/rng.hpp"

namespace lava::views {

void CropConfig::validate() const {
  for (const auto* r : {&global_scale, &local_scale})
    if (!(r->lo >= 0.0 && r->lo < r->hi && r->hi <= 1.0)) throw ConfigError("crop scale range must satisfy 0 <= lo < hi <= 1");
  if (n_small_student < 0 || n_small_teacher < 0 || n_large_student < 0 || n_large_teacher < 0)
    throw ConfigError("crop counts must be non-negative");
  if (n_small_student + n_small_teacher + n_large_student + n_large_teacher == 0)
    throw ConfigError("crop config produces no views");
  if (large_out_size <= 0 || small_out_size <= 0) throw ConfigError("crop output sizes must be positive");
  if (share_large_crops && n_large_teacher != n_large_student)
    throw ConfigError("shared large crops need equal student and teacher large counts");
}

Rect sample_crop(int width, int height, const ScaleRange& range, std::uint64_t seed) {
  Rng rng(seed);
  const double area = static_cast<double>(width) * height;
  const double log_lo = std::log(3.0 / 4.0);
  const double log_hi = std::log(4.0 / 3.0);
  for (int attempt = 0; attempt < kMaxCropAttempts; ++attempt) {
    const double target = rng.uniform(range.lo, range.hi) * area;
    const double aspect = std::exp(rng.uniform(log_lo, log_hi));
    const int w = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    if (w <= 0 || h <= 0 || w > width || h > height) continue;
    if (!range.contains(static_cast<double>(w) * h / area)) continue;
    const int x = rng.between(0, width - w);
    const int y = rng.between(0, height - h);
    return {x, y, w, h};
  }
  // Center-crop fallback: the largest centered rectangle with the image's
  // aspect whose area fraction stays within the range.
  double f = std::sqrt(range.hi);
  int w = std::max(1, static_cast<int>(std::floor(f * width)));
  int h = std::max(1, static_cast<int>(std::floor(f * height)));
  while ((w > 1 || h > 1) && static_cast<double>(w) * h / area > range.hi) {
    if (w >= h && w > 1) --w;
    else --h;
  }
  return {(width - w) / 2, (height - h) / 2, w, h};
}

namespace {

double luminance(const Image& img, int y, int x) {
  if (img.channels != 3) return img.at(0, y, x);
  return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
}

void clamp_unit(Image& img) {
  for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

void flip_horizontal(Image& img) {
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width / 2; ++x) std::swap(img.at(c, y, x), img.at(c, y, img.width - 1 - x));
}

void color_jitter(Image& img, Rng& rng) {
  const double brightness = rng.uniform(1.0 - kJitterStrength, 1.0 + kJitterStrength);
  const double contrast = rng.uniform(1.0 - kJitterStrength, 1.0 + kJitterStrength);
  const double saturation = rng.uniform(1.0 - kJitterStrength, 1.0 + kJitterStrength);
  for (float& v : img.data) v = static_cast<float>(v * brightness);
  clamp_unit(img);
  double mean = 0.0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) mean += luminance(img, y, x);
  mean /= static_cast<double>(img.height) * img.width;
  for (float& v : img.data) v = static_cast<float>(mean + (v - mean) * contrast);
  clamp_unit(img);
  if (img.channels == 3) {
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const double gray = luminance(img, y, x);
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(gray + (img.at(c, y, x) - gray) * saturation);
      }
    clamp_unit(img);
  }
}

void gaussian_blur(Image& img, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& k : kernel) k /= sum;
  Image tmp = img;
  // Separable, clamped borders.
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] * img.at(c, y, std::clamp(x + i, 0, img.width - 1));
        tmp.at(c, y, x) = static_cast<float>(acc);
      }
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[i + radius] * tmp.at(c, std::clamp(y + i, 0, img.height - 1), x);
        img.at(c, y, x) = static_cast<float>(acc);
      }
}

void solarize(Image& img) {
  for (float& v : img.data)
    if (v >= kSolarizeThreshold) v = 1.0f - v;
}

View make_view(const Image& image, const ScaleRange& range, int out_size, bool large, bool solarize_allowed,
               const Augmentations& aug, std::uint64_t seed, int crop_id) {
  View view;
  view.meta.seed = seed;
  view.meta.large = large;
  view.meta.crop_id = crop_id;
  view.meta.source = sample_crop(image.width, image.height, range, derive_seed({seed, 1}));
  view.meta.scale = static_cast<double>(view.meta.source.width) * view.meta.source.height /
                    (static_cast<double>(image.width) * image.height);
  view.image = crop_resize(image, view.meta.source, out_size);

  Rng rng(derive_seed({seed, 2}));
  if (aug.flip && rng.bernoulli(0.5)) {
    flip_horizontal(view.image);
    view.meta.flipped = true;
  }
  if (aug.color_jitter && rng.bernoulli(kJitterProbability)) {
    color_jitter(view.image, rng);
    view.meta.jittered = true;
  }
  if (aug.blur && rng.bernoulli(kBlurProbability)) {
    gaussian_blur(view.image, rng.uniform(0.1, 1.0));
    view.meta.blurred = true;
  }
  if (aug.solarize && solarize_allowed && rng.bernoulli(kSolarizeProbability)) {
    solarize(view.image);
    view.meta.solarized = true;
  }
  return view;
}

enum Role : std::uint64_t { StudentLarge = 0, StudentSmall = 1, TeacherLarge = 2, TeacherSmall = 3 };

}  // namespace

ViewSet generate_views(const Image& image, const CropConfig& config, std::uint64_t seed) {
  config.validate();
  if (image.width < config.small_out_size || image.height < config.small_out_size)
    throw InputError("image smaller than the crop output size");

  ViewSet set;
  int next_id = 0;
  const auto& aug = config.augment;
  // Solarization only ever hits the second large view of a set.
  for (int i = 0; i < config.n_large_student; ++i)
    set.student.push_back(make_view(image, config.global_scale, config.large_out_size, true, i == 1, aug,
                                    derive_seed({seed, StudentLarge, static_cast<std::uint64_t>(i)}), next_id++));
  for (int i = 0; i < config.n_small_student; ++i)
    set.student.push_back(make_view(image, config.local_scale, config.small_out_size, false, false, aug,
                                    derive_seed({seed, StudentSmall, static_cast<std::uint64_t>(i)}), next_id++));
  for (int i = 0; i < config.n_large_teacher; ++i) {
    if (config.share_large_crops) {
      set.teacher.push_back(set.student[static_cast<std::size_t>(i)]);
      continue;
    }
    set.teacher.push_back(make_view(image, config.global_scale, config.large_out_size, true, i == 1, aug,
                                    derive_seed({seed, TeacherLarge, static_cast<std::uint64_t>(i)}), next_id++));
  }
  for (int i = 0; i < config.n_small_teacher; ++i)
    set.teacher.push_back(make_view(image, config.local_scale, config.small_out_size, false, false, aug,
                                    derive_seed({seed, TeacherSmall, static_cast<std::uint64_t>(i)}), next_id++));
  return set;
}

void write_view_metadata_header(std::ostream& out) {
  out << "image,role,slot,crop_id,x,y,w,h,scale,large,flip,jitter,blur,solarize,seed\n";
}

void write_view_metadata(std::ostream& out, std::size_t image_index, const ViewSet& views) {
  auto row = [&](const char* role, std::size_t slot, const View& v) {
    const auto& m = v.meta;
    out << image_index << ',' << role << ',' << slot << ',' << m.crop_id << ',' << m.source.x << ',' << m.source.y
        << ',' << m.source.width << ',' << m.source.height << ',' << m.scale << ',' << m.large << ',' << m.flipped
        << ',' << m.jittered << ',' << m.blurred << ',' << m.solarized << ',' << m.seed << '\n';
  };
  for (std::size_t i = 0; i < views.student.size(); ++i) row("student", i, views.student[i]);
  for (std::size_t i = 0; i < views.teacher.size(); ++i) row("teacher", i, views.teacher[i]);
}

}  // namespace lava::views
