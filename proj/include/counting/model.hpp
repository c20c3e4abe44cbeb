#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "counting/scenegen.hpp"
#include "counting/sgd.hpp"
#include "counting/tape.hpp"
#include "counting/tensor.hpp"

namespace counting {

enum class Framework { Lc, Rlc };

struct ModelConfig {
  Framework framework = Framework::Lc;
  int num_categories = 12;
  int image_size = 64;
  int feature_dim = 32;  // backbone output channels
  int peak_radius = 1;

  int head_channels() const { return (3 * num_categories + 1) / 2; }  // P = ceil(1.5*C)
  int map_size() const { return image_size / 4; }
};

// All trainable tensors plus BatchNorm running statistics. The two final
// 1x1 convolutions and the total-count head start at zero so an untrained
// model sits exactly on the absence threshold (s^c = 0).
struct ModelState {
  ModelConfig config;

  Tensor bb_w1, bb_w2, bb_w3, bb_w4;
  Tensor cls_w1, cls_gamma, cls_beta, cls_w2;
  BnBuffers cls_bn;
  Tensor den_w1, den_gamma, den_beta;
  BnBuffers den_bn;
  Tensor den_w2;                                   // LC: density head final conv (P -> C)
  Tensor tot_w;                                    // RLC: total-count head (P -> 1)
  Tensor mod_fc1_w, mod_fc1_b, mod_fc2_w, mod_fc2_b;  // RLC: weight modulation layer

  static ModelState init(const ModelConfig& config, uint64_t seed);

  // Fixed canonical order; used by the optimizer and the checkpoint format.
  std::vector<std::pair<std::string, Tensor*>> named_params();
  std::vector<std::pair<std::string, std::vector<float>*>> named_buffers();
  void zero_grads();
  bool is_backbone_param(const std::string& name) const { return name.rfind("backbone.", 0) == 0; }
};

struct LcForward {
  Val m;                            // [N,C,H,W] object category maps
  Val d;                            // [N,C,H,W] density maps
  std::vector<std::vector<Val>> peak;  // [N][C], each [H,W]
  std::vector<std::vector<Val>> s;     // [N][C], scalar class confidences
  int n = 0;
};

struct RlcForward {
  Val m;                             // [N,C,H,W]
  std::vector<std::vector<Val>> peak;
  std::vector<std::vector<Val>> s;
  Val d_raw;   // [N,C,H,W] maps from modulated weights
  Val d_tot;   // [N,1,H,W] category-independent density
  Val m_hat;   // sigmoid(M)
  Val g;       // spatial attention, detached inputs
  Val d_hat;   // final category-specific density
  int n = 0;
};

// images: [N,3,S,S] or a single [3,S,S]. with_grad=false enters parameters
// as constants (evaluation path).
LcForward forward_lc(Tape& tape, ModelState& state, const Tensor& images, BnMode mode, bool with_grad = true);
RlcForward forward_rlc(Tape& tape, ModelState& state, const Tensor& images, BnMode mode, bool with_grad = true);

// w_cnt = fc2(softmax(fc1(w_cls))); w_cls enters detached, so gradients train
// the modulation layer only.
Val weight_modulate(Tape& tape, Val w_cls, Val fc1_w, Val fc1_b, Val fc2_w, Val fc2_b);

struct SpatialMask {
  Tensor mask;         // [H,W] in {0,1}
  float threshold = 0; // h_c, the t_c-th highest nonzero peak
  bool empty = false;  // all-zero peak map: mask is all zeros
};

// Hard spatial guidance: heap-selects the t_c-th highest nonzero peak and
// applies the unit step. Fewer than t_c nonzero peaks: the smallest nonzero
// peak is used.
SpatialMask spatial_mask(const Tensor& peak, int t_c);

struct CountPrediction {
  std::vector<double> per_category;  // raw values, gated to 0 when s^c <= 0
  double total = 0.0;                // RLC only: sum(D_tot), ungated
};

// Per-image predictions from eval-mode forward values.
CountPrediction predict_counts_lc(const Tape& tape, const LcForward& fwd, int image_index);
CountPrediction predict_counts_rlc(const Tape& tape, const RlcForward& fwd, int image_index);

}  // namespace counting
