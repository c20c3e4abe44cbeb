#pragma once

#include <string>
#include <vector>

#include "counting/tensor.hpp"

namespace counting {

// SGD with momentum and weight decay:
//   v <- mu*v + (g + wd*p),  p <- p - lr*v
// Parameters belong to one of two learning-rate groups.
struct SgdState {
  struct Slot {
    Tensor* param = nullptr;
    std::vector<float> momentum;
    float lr = 0.0f;
  };

  float momentum_coef = 0.9f;
  float weight_decay = 1e-4f;
  std::vector<Slot> slots;

  void add_param(Tensor* p, float lr) {
    Slot s;
    s.param = p;
    s.momentum.assign(p->numel(), 0.0f);
    s.lr = lr;
    slots.push_back(std::move(s));
  }
};

void sgd_step(SgdState& state);

}  // namespace counting
