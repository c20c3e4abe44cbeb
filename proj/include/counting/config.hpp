#pragma once

#include <cstdint>
#include <string>

namespace counting {

// Flat run configuration; JSON files must use exactly these keys.
struct RunConfig {
  std::string framework = "lc";  // lc | rlc

  // scene generation
  int num_categories = 12;
  int image_size = 64;
  int max_count = 8;
  float zero_probability = 0.5f;
  int min_separation = 10;
  int glyph_radius = 3;
  int n_train = 2000;
  int n_test = 500;

  // supervision
  int t_tilde = 5;
  float lambda = 0.1f;
  int annotated_count = -1;  // RLC |A|; -1 means all categories
  bool rlc_include_s0_mse = false;  // optional Eq. 16 extension, default off
  bool rlc_two_stage = false;       // experimental: stage RLC like LC

  // optimization
  float lr_backbone = 1e-4f;
  float lr_heads = 1e-2f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  int batch_size = 16;
  int epochs_stage1 = 10;
  int epochs_stage2 = 20;
  uint64_t seed = 1;

  std::string output_dir;

  bool is_rlc() const { return framework == "rlc"; }
  int effective_annotated_count() const { return annotated_count < 0 ? num_categories : annotated_count; }

  void validate() const;
  std::string to_json_string() const;
  std::string hash() const;  // FNV-1a over the canonical JSON

  static RunConfig from_json_string(const std::string& text);
  static RunConfig from_file(const std::string& path);
  void save(const std::string& path) const;
};

uint64_t fnv1a64(const void* data, size_t len);
std::string fnv1a64_hex(const std::string& text);

}  // namespace counting
