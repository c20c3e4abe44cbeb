#include "counting/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace counting {

namespace {

Tensor he_conv(int cout, int cin, int k, Rng& rng) {
  const float stddev = std::sqrt(2.0f / static_cast<float>(cin * k * k));
  return Tensor::randn({cout, cin, k, k}, rng, stddev);
}

Tensor he_fc(int out, int in, Rng& rng) {
  const float stddev = std::sqrt(2.0f / static_cast<float>(in));
  return Tensor::randn({out, in}, rng, stddev);
}

}  // namespace

ModelState ModelState::init(const ModelConfig& config, uint64_t seed) {
  if (config.image_size % 4 != 0) throw std::invalid_argument("model: image_size must be divisible by 4");
  const int c = config.num_categories;
  const int p = config.head_channels();
  const int f = config.feature_dim;
  Rng rng = Rng(seed).fork(0x6d6f64656cULL);

  ModelState st;
  st.config = config;
  st.bb_w1 = he_conv(16, 3, 3, rng);
  st.bb_w2 = he_conv(32, 16, 3, rng);
  st.bb_w3 = he_conv(32, 32, 3, rng);
  st.bb_w4 = he_conv(f, 32, 3, rng);

  st.cls_w1 = he_conv(p, f, 1, rng);
  st.cls_gamma = Tensor::full({p}, 1.0f);
  st.cls_beta = Tensor::zeros({p});
  st.cls_w2 = Tensor::zeros({c, p, 1, 1});
  st.cls_bn = BnBuffers(p);

  st.den_w1 = he_conv(p, f, 1, rng);
  st.den_gamma = Tensor::full({p}, 1.0f);
  st.den_beta = Tensor::zeros({p});
  st.den_bn = BnBuffers(p);

  if (config.framework == Framework::Lc) {
    st.den_w2 = Tensor::zeros({c, p, 1, 1});
  } else {
    st.tot_w = Tensor::zeros({1, p, 1, 1});
    const int hidden = p / 2;
    st.mod_fc1_w = he_fc(hidden, p, rng);
    st.mod_fc1_b = Tensor::zeros({hidden});
    st.mod_fc2_w = he_fc(p, hidden, rng);
    st.mod_fc2_b = Tensor::zeros({p});
  }

  for (auto& [name, t] : st.named_params()) {
    (void)name;
    t->set_requires_grad(true);
  }
  return st;
}

std::vector<std::pair<std::string, Tensor*>> ModelState::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out = {
      {"backbone.conv1.weight", &bb_w1}, {"backbone.conv2.weight", &bb_w2},
      {"backbone.conv3.weight", &bb_w3}, {"backbone.conv4.weight", &bb_w4},
      {"cls.conv1.weight", &cls_w1},     {"cls.bn.gamma", &cls_gamma},
      {"cls.bn.beta", &cls_beta},        {"cls.conv2.weight", &cls_w2},
      {"den.conv1.weight", &den_w1},     {"den.bn.gamma", &den_gamma},
      {"den.bn.beta", &den_beta},
  };
  if (config.framework == Framework::Lc) {
    out.emplace_back("den.conv2.weight", &den_w2);
  } else {
    out.emplace_back("tot.conv.weight", &tot_w);
    out.emplace_back("mod.fc1.weight", &mod_fc1_w);
    out.emplace_back("mod.fc1.bias", &mod_fc1_b);
    out.emplace_back("mod.fc2.weight", &mod_fc2_w);
    out.emplace_back("mod.fc2.bias", &mod_fc2_b);
  }
  return out;
}

std::vector<std::pair<std::string, std::vector<float>*>> ModelState::named_buffers() {
  return {
      {"cls.bn.running_mean", &cls_bn.running_mean},
      {"cls.bn.running_var", &cls_bn.running_var},
      {"den.bn.running_mean", &den_bn.running_mean},
      {"den.bn.running_var", &den_bn.running_var},
  };
}

void ModelState::zero_grads() {
  for (auto& [name, t] : named_params()) {
    (void)name;
    t->zero_grad();
  }
}

namespace {

Tensor promote_batch(const Tensor& images, int image_size) {
  if (images.rank() == 3) {
    if (images.dim(0) != 3 || images.dim(1) != image_size || images.dim(2) != image_size)
      throw std::invalid_argument("forward: expected image [3," + std::to_string(image_size) + "," +
                                  std::to_string(image_size) + "], got " + images.shape_str());
    return Tensor({1, 3, images.dim(1), images.dim(2)},
                  std::vector<float>(images.data().begin(), images.data().end()));
  }
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != image_size || images.dim(3) != image_size)
    throw std::invalid_argument("forward: expected images [N,3,S,S] with S=" + std::to_string(image_size) +
                                ", got " + images.shape_str());
  return images;
}

struct ParamEntry {
  Val enter(Tape& tape, Tensor* t, bool with_grad) { return with_grad ? tape.param(t) : tape.constant(*t); }
};

struct TrunkVals {
  Val features;   // backbone output [N,F,H,W]
  Val cls_w2;     // classification final conv weight [C,P,1,1]
  Val m;          // object category maps
  Val f_cnt;      // density branch stem output [N,P,H,W]
};

// Shared backbone + classification head + density stem.
TrunkVals run_trunk(Tape& tape, ModelState& st, const Tensor& images, BnMode mode, bool with_grad) {
  ParamEntry pe;
  const Tensor batch = promote_batch(images, st.config.image_size);
  Val x = tape.constant(batch);

  Val w1 = pe.enter(tape, &st.bb_w1, with_grad);
  Val w2 = pe.enter(tape, &st.bb_w2, with_grad);
  Val w3 = pe.enter(tape, &st.bb_w3, with_grad);
  Val w4 = pe.enter(tape, &st.bb_w4, with_grad);
  x = tape.relu(tape.conv2d(x, w1, 1, 1));
  x = tape.relu(tape.conv2d(x, w2, 2, 1));
  x = tape.relu(tape.conv2d(x, w3, 2, 1));
  Val features = tape.relu(tape.conv2d(x, w4, 1, 1));

  Val cw1 = pe.enter(tape, &st.cls_w1, with_grad);
  Val cg = pe.enter(tape, &st.cls_gamma, with_grad);
  Val cb = pe.enter(tape, &st.cls_beta, with_grad);
  Val cw2 = pe.enter(tape, &st.cls_w2, with_grad);
  Val f_cls = tape.relu(tape.batchnorm2d(tape.conv2d(features, cw1, 1, 0), cg, cb, &st.cls_bn, mode));
  Val m = tape.conv2d(f_cls, cw2, 1, 0);

  Val dw1 = pe.enter(tape, &st.den_w1, with_grad);
  Val dg = pe.enter(tape, &st.den_gamma, with_grad);
  Val db = pe.enter(tape, &st.den_beta, with_grad);
  Val f_cnt = tape.relu(tape.batchnorm2d(tape.conv2d(features, dw1, 1, 0), dg, db, &st.den_bn, mode));

  return {features, cw2, m, f_cnt};
}

void fill_peaks_and_scores(Tape& tape, Val m, int n, int c, int radius, std::vector<std::vector<Val>>& peak,
                           std::vector<std::vector<Val>>& s) {
  peak.assign(n, std::vector<Val>(c));
  s.assign(n, std::vector<Val>(c));
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      peak[ni][ci] = tape.peak_map(tape.select_nc(m, ni, ci), radius);
      s[ni][ci] = tape.mean_nonzero(peak[ni][ci]);
    }
  }
}

}  // namespace

LcForward forward_lc(Tape& tape, ModelState& st, const Tensor& images, BnMode mode, bool with_grad) {
  if (st.config.framework != Framework::Lc) throw std::invalid_argument("forward_lc on a non-LC model");
  ParamEntry pe;
  TrunkVals trunk = run_trunk(tape, st, images, mode, with_grad);
  Val dw2 = pe.enter(tape, &st.den_w2, with_grad);
  LcForward out;
  out.m = trunk.m;
  out.d = tape.conv2d(trunk.f_cnt, dw2, 1, 0);
  out.n = tape.value(trunk.m).dim(0);
  fill_peaks_and_scores(tape, trunk.m, out.n, st.config.num_categories, st.config.peak_radius, out.peak, out.s);
  return out;
}

Val weight_modulate(Tape& tape, Val w_cls, Val fc1_w, Val fc1_b, Val fc2_w, Val fc2_b) {
  Val w = tape.detach(w_cls);
  Val hidden = tape.softmax(tape.fully_connected(w, fc1_w, fc1_b));
  return tape.fully_connected(hidden, fc2_w, fc2_b);
}

RlcForward forward_rlc(Tape& tape, ModelState& st, const Tensor& images, BnMode mode, bool with_grad) {
  if (st.config.framework != Framework::Rlc) throw std::invalid_argument("forward_rlc on a non-RLC model");
  ParamEntry pe;
  TrunkVals trunk = run_trunk(tape, st, images, mode, with_grad);
  const int c = st.config.num_categories;
  const int p = st.config.head_channels();

  Val fc1_w = pe.enter(tape, &st.mod_fc1_w, with_grad);
  Val fc1_b = pe.enter(tape, &st.mod_fc1_b, with_grad);
  Val fc2_w = pe.enter(tape, &st.mod_fc2_w, with_grad);
  Val fc2_b = pe.enter(tape, &st.mod_fc2_b, with_grad);
  Val tw = pe.enter(tape, &st.tot_w, with_grad);

  // Modulated 1x1 convolution weights, one per category; the convolution
  // itself has no learnable parameters.
  std::vector<Val> rows(c);
  for (int ci = 0; ci < c; ++ci) {
    Val w_cls = tape.reshape(tape.row(trunk.cls_w2, ci), {p});
    rows[ci] = weight_modulate(tape, w_cls, fc1_w, fc1_b, fc2_w, fc2_b);
  }
  Val w_cnt = tape.reshape(tape.stack0(rows), {c, p, 1, 1});

  RlcForward out;
  out.m = trunk.m;
  out.n = tape.value(trunk.m).dim(0);
  out.d_raw = tape.conv2d(trunk.f_cnt, w_cnt, 1, 0);
  out.d_tot = tape.conv2d(trunk.f_cnt, tw, 1, 0);
  out.m_hat = tape.sigmoid(trunk.m);
  // Attention inputs are detached: L_rcount trains the modulation layer only.
  out.g = tape.mul_bcast_channel(tape.detach(out.m_hat), tape.detach(out.d_tot));
  out.d_hat = tape.mul(out.d_raw, out.g);
  fill_peaks_and_scores(tape, trunk.m, out.n, c, st.config.peak_radius, out.peak, out.s);
  return out;
}

SpatialMask spatial_mask(const Tensor& peak, int t_c) {
  if (peak.rank() != 2) throw std::invalid_argument("spatial_mask: expected [H,W], got " + peak.shape_str());
  if (t_c < 1) throw std::invalid_argument("spatial_mask: t_c must be >= 1");

  std::vector<float> nonzero;
  nonzero.reserve(64);
  for (size_t i = 0; i < peak.numel(); ++i)
    if (peak[i] != 0.0f) nonzero.push_back(peak[i]);

  SpatialMask out;
  out.mask = Tensor(peak.shape());
  if (nonzero.empty()) {
    out.empty = true;
    return out;
  }

  // Heap selection of the t_c-th highest value (smallest nonzero when there
  // are fewer than t_c peaks).
  std::make_heap(nonzero.begin(), nonzero.end());
  auto end = nonzero.end();
  float h = nonzero.front();
  const int pops = std::min<int>(t_c, static_cast<int>(nonzero.size()));
  for (int i = 0; i < pops; ++i) {
    std::pop_heap(nonzero.begin(), end);
    --end;
    h = *end;
  }
  out.threshold = h;
  for (size_t i = 0; i < peak.numel(); ++i) out.mask[i] = peak[i] - h >= 0.0f ? 1.0f : 0.0f;
  return out;
}

namespace {

CountPrediction gated_counts(const Tape& tape, const std::vector<Val>& scores, Val density, int image_index, int c) {
  CountPrediction out;
  out.per_category.resize(c);
  const Tensor& d = tape.value(density);
  const size_t plane = static_cast<size_t>(d.dim(2)) * d.dim(3);
  for (int ci = 0; ci < c; ++ci) {
    const float s = tape.value(scores[ci])[0];
    if (s <= 0.0f) {
      out.per_category[ci] = 0.0;
      continue;
    }
    double acc = 0.0;
    const float* p = d.data().data() + (static_cast<size_t>(image_index) * c + ci) * plane;
    for (size_t i = 0; i < plane; ++i) acc += p[i];
    out.per_category[ci] = acc;
  }
  return out;
}

}  // namespace

CountPrediction predict_counts_lc(const Tape& tape, const LcForward& fwd, int image_index) {
  const int c = static_cast<int>(fwd.s[image_index].size());
  return gated_counts(tape, fwd.s[image_index], fwd.d, image_index, c);
}

CountPrediction predict_counts_rlc(const Tape& tape, const RlcForward& fwd, int image_index) {
  const int c = static_cast<int>(fwd.s[image_index].size());
  CountPrediction out = gated_counts(tape, fwd.s[image_index], fwd.d_hat, image_index, c);
  const Tensor& dt = tape.value(fwd.d_tot);
  const size_t plane = static_cast<size_t>(dt.dim(2)) * dt.dim(3);
  double acc = 0.0;
  const float* p = dt.data().data() + static_cast<size_t>(image_index) * plane;
  for (size_t i = 0; i < plane; ++i) acc += p[i];
  out.total = acc;
  return out;
}

}  // namespace counting
