#pragma once

#include <optional>
#include <string>

#include "counting/model.hpp"
#include "counting/sgd.hpp"

namespace counting {

// checkpoint.json (manifest: names, shapes, byte offsets, dtype f32le) +
// params.bin (raw little-endian floats). Round-trip is bit-exact.
void save_checkpoint(const std::string& dir, ModelState& state, const SgdState* optimizer = nullptr,
                     const std::string& config_hash = "");

struct LoadedCheckpoint {
  ModelState state;
  bool has_optimizer = false;
  std::vector<std::vector<float>> momentum;  // per named param, when present
  std::string config_hash;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

}  // namespace counting
