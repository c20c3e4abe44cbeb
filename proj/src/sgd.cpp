#include "counting/sgd.hpp"

#include <stdexcept>

namespace counting {

void sgd_step(SgdState& state) {
  for (auto& slot : state.slots) {
    Tensor& p = *slot.param;
    if (!p.requires_grad()) throw std::logic_error("sgd_step: parameter has no gradient buffer");
    auto g = p.grad();
    auto d = p.data();
    for (size_t i = 0; i < d.size(); ++i) {
      const float v = state.momentum_coef * slot.momentum[i] + (g[i] + state.weight_decay * d[i]);
      slot.momentum[i] = v;
      d[i] -= slot.lr * v;
    }
  }
}

}  // namespace counting
