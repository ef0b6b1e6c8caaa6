// SPDX-License-Identifier: Apache-2.0
#include "lava/data/composite.hpp"

#include <algorithm>
#include <cmath>

#include "lava/errors.hpp"
#include "lava/rng.hpp"

namespace lava::data {

namespace {

Stroke random_stroke(Rng& rng) {
  // Long enough to be visible at 12 px; endpoints kept off the box border.
  for (;;) {
    Stroke s{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    if (std::hypot(s.x1 - s.x0, s.y1 - s.y0) >= 0.45) return s;
  }
}

double segment_distance(double px, double py, double x0, double y0, double x1, double y1) {
  const double dx = x1 - x0, dy = y1 - y0;
  const double len2 = dx * dx + dy * dy;
  const double t = len2 > 0 ? std::clamp(((px - x0) * dx + (py - y0) * dy) / len2, 0.0, 1.0) : 0.0;
  return std::hypot(px - (x0 + t * dx), py - (y0 + t * dy));
}

bool overlaps(const views::Rect& a, const views::Rect& b) {
  return a.x < b.x + b.width && b.x < a.x + a.width && a.y < b.y + b.height && b.y < a.y + a.height;
}

}  // namespace

std::vector<GlyphPrototype> make_vocabulary(int n_classes, std::uint64_t seed, const std::string& prefix, int strokes) {
  if (n_classes < 1 || strokes < 1) throw ConfigError("vocabulary needs at least one class and one stroke");
  std::vector<GlyphPrototype> out;
  for (int c = 0; c < n_classes; ++c) {
    Rng rng(derive_seed({seed, 0x6C7970ULL, static_cast<std::uint64_t>(c)}));
    GlyphPrototype g;
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02d", c);
    g.name = prefix + "_" + buf;
    for (int s = 0; s < strokes; ++s) g.strokes.push_back(random_stroke(rng));
    out.push_back(std::move(g));
  }
  return out;
}

GlyphPrototype make_sibling(const std::vector<GlyphPrototype>& vocab, std::size_t parent, const std::string& name,
                            std::uint64_t seed) {
  if (parent >= vocab.size()) throw ConfigError("sibling parent out of range");
  Rng rng(derive_seed({seed, hash_string(name)}));
  GlyphPrototype g{name, vocab[parent].strokes, parent};
  g.strokes[rng.below(g.strokes.size())] = random_stroke(rng);
  return g;
}

void CompositeSpec::validate() const {
  if (canvas < 1 || glyph_size < 1 || glyph_size > canvas) throw ConfigError("glyph must fit the canvas");
  if (vocabulary.empty()) throw ConfigError("empty glyph vocabulary");
  if (dual_fraction < 0.0 || dual_fraction > 1.0) throw ConfigError("dual_fraction must lie in [0, 1]");
  if (dual_fraction > 0.0) {
    if (vocabulary.size() < 2) throw ConfigError("two-object images need at least two classes");
    if (canvas < 2 * glyph_size) throw ConfigError("two-object images need a canvas of at least twice the glyph size");
  }
  if (validation_per_class < 0) throw ConfigError("validation_per_class must be non-negative");
}

views::Image compose_image(const CompositeSpec& spec, const std::vector<std::size_t>& class_ids, std::uint64_t seed,
                           std::vector<views::Rect>* boxes) {
  Rng rng(seed);
  const int c = spec.canvas, g = spec.glyph_size;
  views::Image img(3, c, c);
  std::vector<float> mask(static_cast<std::size_t>(c) * c, 0.0f);
  for (std::size_t k : class_ids)
    if (k >= spec.vocabulary.size()) throw ConfigError("glyph class out of range");
  std::vector<views::Rect> placed;
  for (int restart = 0; placed.size() < class_ids.size(); ++restart) {
    if (restart > 100) throw ConfigError("cannot place glyphs without overlap");
    placed.clear();
    while (placed.size() < class_ids.size()) {
      std::vector<views::Rect> free;
      for (int y = 0; y <= c - g; ++y)
        for (int x = 0; x <= c - g; ++x) {
          const views::Rect r{x, y, g, g};
          if (std::none_of(placed.begin(), placed.end(), [&](const views::Rect& p) { return overlaps(p, r); }))
            free.push_back(r);
        }
      if (free.empty()) break;
      placed.push_back(free[rng.below(free.size())]);
    }
  }
  for (std::size_t slot = 0; slot < class_ids.size(); ++slot) {
    const std::size_t k = class_ids[slot];
    const views::Rect box = placed[slot];
    const double j = spec.jitter;
    const double angle = j * rng.uniform(-0.2, 0.2);
    const double scale = 1.0 + j * rng.uniform(-0.12, 0.08);
    const double width = spec.style.stroke_width * (1.0 + j * rng.uniform(-0.15, 0.15));
    const double ca = std::cos(angle), sa = std::sin(angle);
    auto map = [&](double u, double v, double& x, double& y) {
      const double cu = (u - 0.5) * scale, cv = (v - 0.5) * scale;
      x = box.x + (0.5 + ca * cu - sa * cv) * (g - 1);
      y = box.y + (0.5 + sa * cu + ca * cv) * (g - 1);
    };
    for (const Stroke& s : spec.vocabulary[k].strokes) {
      double x0, y0, x1, y1;
      map(s.x0 + j * rng.uniform(-0.03, 0.03), s.y0 + j * rng.uniform(-0.03, 0.03), x0, y0);
      map(s.x1 + j * rng.uniform(-0.03, 0.03), s.y1 + j * rng.uniform(-0.03, 0.03), x1, y1);
      for (int y = box.y; y < box.y + g; ++y)
        for (int x = box.x; x < box.x + g; ++x) {
          const double d = segment_distance(x, y, x0, y0, x1, y1);
          const double a = std::clamp(1.0 - (d - 0.5 * width), 0.0, 1.0);
          float& mv = mask[static_cast<std::size_t>(y) * c + x];
          mv = std::max(mv, static_cast<float>(a));
        }
    }
  }
  for (int ch = 0; ch < 3; ++ch) {
    const auto bg = spec.style.background[static_cast<std::size_t>(ch)];
    const auto fg = spec.style.foreground[static_cast<std::size_t>(ch)];
    for (int y = 0; y < c; ++y)
      for (int x = 0; x < c; ++x) {
        const double a = mask[static_cast<std::size_t>(y) * c + x];
        const double noise = spec.style.noise > 0 ? spec.style.noise * rng.normal() : 0.0;
        img.at(ch, y, x) = static_cast<float>(std::clamp(bg + a * (fg - bg) + noise, 0.0, 1.0));
      }
  }
  views::quantize_8bit(img);
  if (boxes) *boxes = std::move(placed);
  return img;
}

DatasetManifest generate_composite_dataset(const CompositeSpec& spec, int n_per_class) {
  spec.validate();
  if (n_per_class < 0) throw ConfigError("n_per_class must be non-negative");
  std::vector<std::string> names;
  for (const auto& g : spec.vocabulary) names.push_back(g.name);
  DatasetManifest m(names);
  const std::size_t k = spec.vocabulary.size();
  const int n_dual = static_cast<int>(std::lround(spec.dual_fraction * n_per_class));
  std::uint64_t serial = 0;
  auto emit = [&](std::size_t cls, std::optional<std::size_t> second, Split split) {
    std::vector<std::size_t> ids{cls};
    if (second) ids.push_back(*second);
    DatasetItem item;
    item.split = split;
    item.image = compose_image(spec, ids, derive_seed({spec.seed, 0x17E4ULL, serial}));
    item.path = names[cls] + "/" + std::to_string(serial) + ".ppm";
    ++serial;
    m.add(std::move(item), static_cast<int>(cls),
          second ? std::optional<int>(static_cast<int>(*second)) : std::nullopt);
  };
  for (std::size_t cls = 0; cls < k; ++cls) {
    Rng rng(derive_seed({spec.seed, 0xD0A1ULL, cls}));
    for (int i = 0; i < n_per_class; ++i) {
      std::optional<std::size_t> second;
      if (i < n_dual) {
        const std::size_t s = rng.below(k - 1);
        second = s >= cls ? s + 1 : s;
      }
      emit(cls, second, Split::Labelled);
    }
  }
  for (std::size_t cls = 0; cls < k; ++cls)
    for (int i = 0; i < spec.validation_per_class; ++i) emit(cls, std::nullopt, Split::Validation);
  return m;
}

}  // namespace lava::data
