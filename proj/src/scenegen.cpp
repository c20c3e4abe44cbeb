#include "counting/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace counting {

void SceneSpec::validate() const {
  if (num_categories < 2) throw std::invalid_argument("scene spec: num_categories must be >= 2");
  if (image_size < 32) throw std::invalid_argument("scene spec: image_size must be >= 32");
  if (max_count < 1) throw std::invalid_argument("scene spec: max_count must be >= 1");
  if (zero_probability < 0.0f || zero_probability > 1.0f)
    throw std::invalid_argument("scene spec: zero_probability must be in [0,1]");
  if (min_separation < 1) throw std::invalid_argument("scene spec: min_separation must be >= 1");
  if (glyph_radius < 1 || 2 * glyph_radius + 2 > image_size)
    throw std::invalid_argument("scene spec: glyph_radius out of range");
  if (!glyphs.empty()) {
    if (static_cast<int>(glyphs.size()) != num_categories)
      throw std::invalid_argument("scene spec: glyph table size does not match num_categories");
    for (size_t i = 0; i < glyphs.size(); ++i)
      for (size_t j = i + 1; j < glyphs.size(); ++j)
        if (glyphs[i].color == glyphs[j].color)
          throw std::invalid_argument("scene spec: glyph colors must be pairwise distinct");
  }
}

namespace {

std::array<float, 3> hsv_to_rgb(float h, float s, float v) {
  const float c = v * s;
  const float hp = h * 6.0f;
  const float x = c * (1.0f - std::fabs(std::fmod(hp, 2.0f) - 1.0f));
  float r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c; g = x;
  } else if (hp < 2) {
    r = x; g = c;
  } else if (hp < 3) {
    g = c; b = x;
  } else if (hp < 4) {
    g = x; b = c;
  } else if (hp < 5) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  const float m = v - c;
  return {r + m, g + m, b + m};
}

void render_glyph(Tensor& image, const Glyph& glyph, int row, int col, int radius) {
  const int s = image.dim(1);
  const size_t plane = static_cast<size_t>(s) * s;
  for (int di = -radius; di <= radius; ++di) {
    for (int dj = -radius; dj <= radius; ++dj) {
      bool inside = false;
      switch (glyph.shape) {
        case GlyphShape::Square:
          inside = true;
          break;
        case GlyphShape::Disc:
          inside = di * di + dj * dj <= radius * radius;
          break;
        case GlyphShape::Triangle:
          // apex at the top row, base at the bottom
          inside = std::abs(dj) * 2 <= di + radius;
          break;
      }
      if (!inside) continue;
      const int i = row + di, j = col + dj;
      const size_t off = static_cast<size_t>(i) * s + j;
      for (int ch = 0; ch < 3; ++ch) image[static_cast<size_t>(ch) * plane + off] = glyph.color[ch];
    }
  }
}

}  // namespace

std::vector<Glyph> default_glyphs(int num_categories) {
  std::vector<Glyph> glyphs(num_categories);
  constexpr GlyphShape kShapes[3] = {GlyphShape::Square, GlyphShape::Disc, GlyphShape::Triangle};
  for (int c = 0; c < num_categories; ++c) {
    glyphs[c].shape = kShapes[c % 3];
    // hue wheel, alternating value so hue-adjacent categories still differ
    const float hue = static_cast<float>(c) / static_cast<float>(num_categories);
    const float value = (c % 2 == 0) ? 0.95f : 0.65f;
    glyphs[c].color = hsv_to_rgb(hue, 0.85f, value);
  }
  return glyphs;
}

Dataset generate_dataset(const SceneSpec& spec_in, int n_samples) {
  SceneSpec spec = spec_in;
  if (spec.glyphs.empty()) spec.glyphs = default_glyphs(spec.num_categories);
  spec.validate();
  if (n_samples < 1) throw std::invalid_argument("generate_dataset: n_samples must be >= 1");

  const int s = spec.image_size;
  const int r = spec.glyph_radius;
  // Same-category centers keep min_separation (Euclidean); any two glyphs keep
  // a Chebyshev gap wide enough that rendered pixels are never 8-adjacent.
  const int cheb_gap = 2 * r + 2;
  const long sep2 = static_cast<long>(spec.min_separation) * spec.min_separation;

  Rng rng(spec.seed);
  Dataset ds;
  ds.spec = spec;
  ds.samples.reserve(n_samples);

  for (int si = 0; si < n_samples; ++si) {
    SceneSample sample;
    sample.image = Tensor({3, s, s});
    sample.gt_counts.resize(spec.num_categories);
    sample.gt_points.resize(spec.num_categories);

    for (int c = 0; c < spec.num_categories; ++c) {
      const bool zero = rng.uniform() < spec.zero_probability;
      sample.gt_counts[c] = zero ? 0 : rng.uniform_int(1, spec.max_count);
    }

    std::vector<Point> placed;
    std::vector<int> placed_cat;
    for (int c = 0; c < spec.num_categories; ++c) {
      for (int k = 0; k < sample.gt_counts[c]; ++k) {
        bool ok = false;
        for (int attempt = 0; attempt < 1000; ++attempt) {
          const int row = rng.uniform_int(r, s - 1 - r);
          const int col = rng.uniform_int(r, s - 1 - r);
          ok = true;
          for (size_t p = 0; p < placed.size(); ++p) {
            const int dr = placed[p].row - row;
            const int dc = placed[p].col - col;
            if (std::max(std::abs(dr), std::abs(dc)) < cheb_gap) {
              ok = false;
              break;
            }
            if (placed_cat[p] == c && static_cast<long>(dr) * dr + static_cast<long>(dc) * dc < sep2) {
              ok = false;
              break;
            }
          }
          if (ok) {
            placed.push_back({row, col});
            placed_cat.push_back(c);
            sample.gt_points[c].push_back({row, col});
            render_glyph(sample.image, spec.glyphs[c], row, col, r);
            break;
          }
        }
        if (!ok)
          throw std::runtime_error("generate_dataset: glyph placement infeasible after 1000 attempts in sample " +
                                   std::to_string(si));
      }
    }
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

LcAnnotation annotate_lc(const SceneSample& sample, int t_tilde) {
  if (t_tilde < 2) throw std::invalid_argument("annotate_lc: t_tilde must be >= 2");
  LcAnnotation ann;
  ann.t_tilde = t_tilde;
  const int c = static_cast<int>(sample.gt_counts.size());
  ann.labels.resize(c);
  ann.exact.assign(c, 0);
  for (int i = 0; i < c; ++i) {
    const int t = sample.gt_counts[i];
    if (t == 0) {
      ann.labels[i] = LcLabel::Absent;
    } else if (t < t_tilde) {
      ann.labels[i] = LcLabel::Exact;
      ann.exact[i] = t;
    } else {
      ann.labels[i] = LcLabel::Beyond;
    }
  }
  return ann;
}

std::vector<int> LcAnnotation::set_s0() const {
  std::vector<int> out;
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == LcLabel::Absent) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> LcAnnotation::set_s() const {
  std::vector<int> out;
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == LcLabel::Exact) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> LcAnnotation::set_s_tilde() const {
  std::vector<int> out;
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == LcLabel::Beyond) out.push_back(static_cast<int>(i));
  return out;
}

RlcSplit make_rlc_split(int num_categories, int annotated_count, uint64_t seed) {
  if (annotated_count < 0 || annotated_count > num_categories)
    throw std::invalid_argument("make_rlc_split: annotated_count must be in [0, C]");
  std::vector<int> order(num_categories);
  for (int i = 0; i < num_categories; ++i) order[i] = i;
  Rng rng(seed);
  for (int i = num_categories - 1; i > 0; --i) {
    const int j = rng.uniform_int(0, i);
    std::swap(order[i], order[j]);
  }
  RlcSplit split;
  split.in_a.assign(num_categories, false);
  for (int i = 0; i < annotated_count; ++i) {
    split.set_a.push_back(order[i]);
    split.in_a[order[i]] = true;
  }
  for (int i = annotated_count; i < num_categories; ++i) split.set_b.push_back(order[i]);
  std::sort(split.set_a.begin(), split.set_a.end());
  std::sort(split.set_b.begin(), split.set_b.end());
  return split;
}

}  // namespace counting
