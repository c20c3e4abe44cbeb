#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "counting/rng.hpp"
#include "counting/tensor.hpp"

namespace counting {

enum class GlyphShape { Square, Disc, Triangle };

struct Glyph {
  GlyphShape shape;
  std::array<float, 3> color;  // RGB in [0,1], pairwise distinct across categories
};

struct SceneSpec {
  int num_categories = 12;
  int image_size = 64;
  int max_count = 8;
  float zero_probability = 0.5f;
  int min_separation = 10;  // same-category center distance, pixels
  int glyph_radius = 3;
  uint64_t seed = 1;
  std::vector<Glyph> glyphs;  // filled by default_glyphs() when empty

  void validate() const;
};

// One glyph shape + distinct color per category.
std::vector<Glyph> default_glyphs(int num_categories);

struct Point {
  int row = 0;
  int col = 0;
};

struct SceneSample {
  Tensor image;                                // [3, S, S], values in [0,1]
  std::vector<int> gt_counts;                  // t_c per category
  std::vector<std::vector<Point>> gt_points;   // instance centers per category
};

struct Dataset {
  SceneSpec spec;
  std::vector<SceneSample> samples;
};

// Per-image lower-count annotation: the sets S0 / S / S-tilde as labels.
enum class LcLabel { Absent, Exact, Beyond };

struct LcAnnotation {
  int t_tilde = 5;
  std::vector<LcLabel> labels;  // per category
  std::vector<int> exact;       // valid where label == Exact

  std::vector<int> set_s0() const;
  std::vector<int> set_s() const;
  std::vector<int> set_s_tilde() const;
};

// Dataset-level split: categories with count annotations (A) vs class labels
// only (B).
struct RlcSplit {
  std::vector<int> set_a;
  std::vector<int> set_b;
  std::vector<bool> in_a;  // size C lookup
};

Dataset generate_dataset(const SceneSpec& spec, int n_samples);
LcAnnotation annotate_lc(const SceneSample& sample, int t_tilde);
RlcSplit make_rlc_split(int num_categories, int annotated_count, uint64_t seed);

}  // namespace counting
