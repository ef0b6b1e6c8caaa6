// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lava/data/dataset.hpp"
#include "lava/views/image.hpp"

namespace lava::data {

struct Stroke {
  double x0, y0, x1, y1;  // glyph-box coordinates in [0, 1]
};

/// Procedural class shape.
struct GlyphPrototype {
  std::string name;
  std::vector<Stroke> strokes;
  std::optional<std::size_t> parent;  // set for sibling classes
};

/// Base prototypes with `strokes` random strokes each.
std::vector<GlyphPrototype> make_vocabulary(int n_classes, std::uint64_t seed, const std::string& prefix = "glyph",
                                            int strokes = 3);

/// A sibling keeps all but one of the parent's strokes and gets one new stroke.
GlyphPrototype make_sibling(const std::vector<GlyphPrototype>& vocab, std::size_t parent, const std::string& name,
                            std::uint64_t seed);

/// Rendering style; a different style is a different visual domain.
struct GlyphStyle {
  std::array<double, 3> background{0.1, 0.1, 0.1};
  std::array<double, 3> foreground{0.9, 0.9, 0.9};
  double noise = 0.03;       // gaussian pixel noise std
  double stroke_width = 1.1;  // pixels, before per-item jitter
};

struct CompositeSpec {
  int canvas = 32;
  int glyph_size = 12;
  std::vector<GlyphPrototype> vocabulary;
  double dual_fraction = 0.0;  // share of items per class with a second glyph
  double jitter = 1.0;         // deformation strength, 0 disables it
  GlyphStyle style;
  int validation_per_class = 0;
  std::uint64_t seed = 0;

  /// Throws ConfigError when dual items are requested with fewer than two
  /// classes or a canvas smaller than twice the glyph.
  void validate() const;
};

/// Renders glyphs of `class_ids` (first one is the nominal class) without
/// overlap and reports each glyph's box.
views::Image compose_image(const CompositeSpec& spec, const std::vector<std::size_t>& class_ids, std::uint64_t seed,
                           std::vector<views::Rect>* boxes = nullptr);

/// n_per_class labelled items per class, round(dual_fraction * n_per_class)
/// of them dual, plus validation_per_class single-object validation items.
/// Images are already 8-bit quantized so a save/load cycle is lossless.
DatasetManifest generate_composite_dataset(const CompositeSpec& spec, int n_per_class);

}  // namespace lava::data
