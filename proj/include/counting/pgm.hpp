#pragma once

#include <string>

#include "counting/tensor.hpp"

namespace counting {

// Binary PGM (P5, maxval 255). Nonzero pixels load as 1.0.
Tensor load_pgm_mask(const std::string& path);

// Writes a float map normalized by the given scale (values scale to 0..255).
void save_pgm(const Tensor& map, const std::string& path, float scale);

// Raw little-endian float32 blob of known element count.
Tensor load_f32_blob(const std::string& path, const std::vector<int>& shape);
void save_f32_blob(const Tensor& t, const std::string& path);

}  // namespace counting
