#pragma once

#include <string>

#include "counting/scenegen.hpp"

namespace counting {

// Directory layout: manifest.json + images.bin (f32le, row-major,
// sample-major) + annotations.json. Round-trip is bit-exact.
void save_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// Writes sample images as binary PPM (P6, maxval 255) for inspection.
void export_ppm(const Dataset& dataset, const std::string& dir);

}  // namespace counting
