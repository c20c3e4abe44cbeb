#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "counting/losses.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace counting;

namespace {

Val scalar_leaf(Tape& tape, float v) { return tape.leaf(Tensor::scalar(v)); }

}  // namespace

TEST_CASE("loss_class examples") {
  {
    Tape tape;
    Val s = scalar_leaf(tape, 0.0f);
    float y = 1.0f;
    Val l = loss_class(tape, std::vector<Val>{s}, std::span<const float>(&y, 1));
    CHECK(tape.value(l)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-4));
  }
  {
    Tape tape;
    Val s = scalar_leaf(tape, 30.0f);
    float y = 1.0f;
    Val l = loss_class(tape, std::vector<Val>{s}, std::span<const float>(&y, 1));
    CHECK(tape.value(l)[0] == doctest::Approx(0.0).epsilon(1e-6));
  }
  {
    Tape tape;
    std::vector<Val> s = {scalar_leaf(tape, 0.0f), scalar_leaf(tape, 0.0f)};
    std::vector<float> y = {1.0f, 0.0f};
    Val l = loss_class(tape, s, y);
    CHECK(tape.value(l)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-4));
  }
}

TEST_CASE("loss_sp_plus examples and masking") {
  {
    // single mask pixel, density 0 there -> log 2
    Tape tape;
    Tensor mask = Tensor::zeros({2, 2});
    mask[0] = 1.0f;
    std::vector<Val> maps = {tape.leaf(Tensor::zeros({2, 2}), true)};
    std::vector<Tensor> masks = {mask};
    Val l = loss_sp_plus(tape, maps, masks, nullptr);
    CHECK(tape.value(l)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-4));
  }
  {
    // saturated positive -> ~0
    Tape tape;
    Tensor d = Tensor::zeros({2, 2});
    d[0] = 30.0f;
    Tensor mask = Tensor::zeros({2, 2});
    mask[0] = 1.0f;
    std::vector<Val> maps = {tape.leaf(d)};
    std::vector<Tensor> masks = {mask};
    Val l = loss_sp_plus(tape, maps, masks, nullptr);
    CHECK(tape.value(l)[0] == doctest::Approx(0.0).epsilon(1e-6));
  }
  {
    // empty mask contributes zero and bumps the counter
    Tape tape;
    WarningCounters warn;
    std::vector<Val> maps = {tape.leaf(Tensor::full({2, 2}, 3.0f))};
    std::vector<Tensor> masks = {Tensor::zeros({2, 2})};
    Val l = loss_sp_plus(tape, maps, masks, &warn);
    CHECK(tape.value(l)[0] == 0.0f);
    CHECK(warn.empty_masks == 1);
  }
}

TEST_CASE("loss_sp_plus matches the scalar oracle and zeroes masked gradients") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int hw = 4;
    Tensor d({hw, hw});
    Tensor mask = Tensor::zeros({hw, hw});
    std::vector<std::vector<double>> d_oracle(1, std::vector<double>(hw * hw));
    std::vector<std::vector<double>> m_oracle(1, std::vector<double>(hw * hw));
    for (int i = 0; i < hw * hw; ++i) {
      d[i] = static_cast<float>(rng.normal());
      d_oracle[0][i] = d[i];
    }
    for (int k = 0; k < 3; ++k) {
      const int pos = rng.uniform_int(0, hw * hw - 1);
      mask[pos] = 1.0f;
      m_oracle[0][pos] = 1.0;
    }

    Tape tape;
    Val dv = tape.leaf(d, true);
    std::vector<Tensor> masks = {mask};
    Val l = loss_sp_plus(tape, std::vector<Val>{dv}, masks, nullptr);
    CHECK(tape.value(l)[0] == doctest::Approx(oracles::sp_plus(d_oracle, m_oracle)).epsilon(1e-5));

    tape.backward(l);
    for (int i = 0; i < hw * hw; ++i)
      if (mask[i] == 0.0f) CHECK(tape.grad(dv)[i] == 0.0f);  // Eq. 8 contract
  }
}

TEST_CASE("loss_sp_minus examples and oracle") {
  {
    Tape tape;
    std::vector<Val> maps = {tape.leaf(Tensor::zeros({3, 5}))};
    Val l = loss_sp_minus(tape, maps);
    CHECK(tape.value(l)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-4));
  }
  {
    Tape tape;
    std::vector<Val> maps = {tape.leaf(Tensor::full({3, 5}, -30.0f))};
    Val l = loss_sp_minus(tape, maps);
    CHECK(tape.value(l)[0] == doctest::Approx(0.0).epsilon(1e-6));
  }
  {
    Tape tape;
    Val l = loss_sp_minus(tape, std::vector<Val>{});
    CHECK(tape.value(l)[0] == 0.0f);
  }
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor d({3, 3});
    std::vector<std::vector<double>> d_oracle(1, std::vector<double>(9));
    for (int i = 0; i < 9; ++i) {
      d[i] = static_cast<float>(rng.normal() * 2.0);
      d_oracle[0][i] = d[i];
    }
    Tape tape;
    Val l = loss_sp_minus(tape, std::vector<Val>{tape.leaf(d)});
    CHECK(tape.value(l)[0] == doctest::Approx(oracles::sp_minus(d_oracle)).epsilon(1e-5));
  }
}

TEST_CASE("loss_mse_count examples and oracle") {
  {
    Tape tape;
    std::vector<Val> counts = {scalar_leaf(tape, 3.0f)};
    std::vector<float> gt = {3.0f};
    CHECK(tape.value(loss_mse_count(tape, counts, gt))[0] == 0.0f);
  }
  {
    Tape tape;
    std::vector<Val> counts = {scalar_leaf(tape, 0.0f), scalar_leaf(tape, 4.0f)};
    std::vector<float> gt = {0.0f, 2.0f};
    CHECK(tape.value(loss_mse_count(tape, counts, gt))[0] == doctest::Approx(2.0f));
  }
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    Tape tape;
    std::vector<Val> counts;
    std::vector<float> gt;
    std::vector<double> pred_oracle, gt_oracle;
    for (int c = 0; c < 20; ++c) {
      const float p = static_cast<float>(rng.normal() * 3.0);
      const float t = static_cast<float>(rng.uniform_int(0, 8));
      counts.push_back(scalar_leaf(tape, p));
      gt.push_back(t);
      pred_oracle.push_back(p);
      gt_oracle.push_back(t);
    }
    Val l = loss_mse_count(tape, counts, gt);
    CHECK(tape.value(l)[0] == doctest::Approx(oracles::mse_count(pred_oracle, gt_oracle)).epsilon(1e-5));
  }
}

TEST_CASE("loss_rank examples") {
  Tape tape;
  {
    std::vector<Val> counts = {scalar_leaf(tape, 3.0f)};
    CHECK(tape.value(loss_rank(tape, counts, 5.0f))[0] == doctest::Approx(2.0f));
  }
  {
    std::vector<Val> counts = {scalar_leaf(tape, 7.0f)};
    CHECK(tape.value(loss_rank(tape, counts, 5.0f))[0] == 0.0f);
  }
  {
    std::vector<Val> counts = {scalar_leaf(tape, 3.0f), scalar_leaf(tape, 7.0f)};
    CHECK(tape.value(loss_rank(tape, counts, 5.0f))[0] == doctest::Approx(1.0f));
  }
  CHECK(tape.value(loss_rank(tape, std::vector<Val>{}, 5.0f))[0] == 0.0f);
}

TEST_CASE("loss_rcount examples and oracle") {
  {
    Tape tape;
    std::vector<Val> s = {scalar_leaf(tape, 2.0f)};
    std::vector<float> gt = {2.0f};
    RcountLoss l = loss_rcount(tape, s, gt, {}, 5.0f);
    CHECK(tape.value(l.total)[0] == 0.0f);
  }
  {
    Tape tape;
    std::vector<Val> st = {scalar_leaf(tape, 1.0f)};
    RcountLoss l = loss_rcount(tape, {}, {}, st, 5.0f);
    CHECK(tape.value(l.total)[0] == doctest::Approx(4.0f));
  }
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    Tape tape;
    std::vector<Val> s_counts, st_counts;
    std::vector<float> gt;
    std::vector<double> po, go, sto;
    const int ns = rng.uniform_int(0, 4), nst = rng.uniform_int(0, 4);
    for (int i = 0; i < ns; ++i) {
      const float p = static_cast<float>(rng.normal() * 3.0);
      const float t = static_cast<float>(rng.uniform_int(1, 4));
      s_counts.push_back(scalar_leaf(tape, p));
      gt.push_back(t);
      po.push_back(p);
      go.push_back(t);
    }
    for (int i = 0; i < nst; ++i) {
      const float p = static_cast<float>(rng.normal() * 4.0);
      st_counts.push_back(scalar_leaf(tape, p));
      sto.push_back(p);
    }
    RcountLoss l = loss_rcount(tape, s_counts, gt, st_counts, 5.0f);
    CHECK(tape.value(l.total)[0] == doctest::Approx(oracles::rcount(po, go, sto, 5.0)).epsilon(1e-5));
  }
}

TEST_CASE("loss_tot examples and oracle") {
  {
    // S counts {2,3}, |S~|=1, t~=5 -> t_tot = 10; exact prediction, Z=0 -> 0
    const float t_tot = 2.0f + 3.0f + 5.0f * 1.0f;
    CHECK(t_tot == 10.0f);
    Tape tape;
    Val l = loss_tot(tape, scalar_leaf(tape, 10.0f), t_tot, 0);
    CHECK(tape.value(l)[0] == 0.0f);
  }
  {
    // over-prediction unpenalized when the exact total is unknown
    Tape tape;
    Val l = loss_tot(tape, scalar_leaf(tape, 12.0f), 10.0f, 2);
    CHECK(tape.value(l)[0] == 0.0f);
  }
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    Tape tape;
    const float pred = static_cast<float>(rng.normal() * 10.0);
    const float gt = static_cast<float>(rng.uniform_int(0, 20));
    const int z = rng.uniform_int(0, 3);
    Val l = loss_tot(tape, scalar_leaf(tape, pred), gt, z);
    CHECK(tape.value(l)[0] == doctest::Approx(oracles::tot(pred, gt, z)).epsilon(1e-4));
  }
}

TEST_CASE("loss component non-negativity") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    Tensor d({3, 3});
    for (int i = 0; i < 9; ++i) d[i] = static_cast<float>(rng.normal() * 5.0);
    Tensor mask = Tensor::zeros({3, 3});
    mask[rng.uniform_int(0, 8)] = 1.0f;
    std::vector<Tensor> masks = {mask};
    CHECK(tape.value(loss_sp_plus(tape, std::vector<Val>{tape.leaf(d)}, masks, nullptr))[0] >= 0.0f);
    CHECK(tape.value(loss_sp_minus(tape, std::vector<Val>{tape.leaf(d)}))[0] >= 0.0f);
    std::vector<Val> counts = {scalar_leaf(tape, static_cast<float>(rng.normal() * 4.0))};
    std::vector<float> gt = {static_cast<float>(rng.uniform_int(0, 8))};
    CHECK(tape.value(loss_mse_count(tape, counts, gt))[0] >= 0.0f);
    CHECK(tape.value(loss_rank(tape, counts, 5.0f))[0] >= 0.0f);
  }
}

namespace {

struct LcFixture {
  ModelConfig mc;
  ModelState st;
  Dataset ds;
  std::vector<LcAnnotation> ann;

  LcFixture() : mc(), st(), ds() {
    mc.framework = Framework::Lc;
    mc.num_categories = 4;
    mc.image_size = 32;
    st = ModelState::init(mc, 55);
    Rng rng(3);
    st.den_w2 = Tensor::randn({4, mc.head_channels(), 1, 1}, rng, 0.3f);
    st.den_w2.set_requires_grad(true);
    st.cls_w2 = Tensor::randn({4, mc.head_channels(), 1, 1}, rng, 0.3f);
    st.cls_w2.set_requires_grad(true);

    SceneSpec spec;
    spec.num_categories = 4;
    spec.image_size = 32;
    spec.max_count = 7;
    spec.min_separation = 8;
    spec.seed = 100;
    ds = generate_dataset(spec, 4);
    for (const auto& s : ds.samples) ann.push_back(annotate_lc(s, 5));
  }

  Tensor batch() const {
    Tensor out({static_cast<int>(ds.samples.size()), 3, 32, 32});
    const size_t per = 3 * 32 * 32;
    for (size_t i = 0; i < ds.samples.size(); ++i)
      std::copy_n(ds.samples[i].image.data().begin(), per, out.data().begin() + i * per);
    return out;
  }
};

}  // namespace

TEST_CASE("assemble_lc staging and lambda weighting") {
  LcFixture fx;
  Tensor batch = fx.batch();

  Tape t1;
  LcForward f1 = forward_lc(t1, fx.st, batch, BnMode::Eval);
  WarningCounters w1;
  BatchLoss stage1 = assemble_lc(t1, f1, fx.ann, 1, 0.1f, &w1);

  Tape t2;
  LcForward f2 = forward_lc(t2, fx.st, batch, BnMode::Eval);
  WarningCounters w2;
  BatchLoss stage2 = assemble_lc(t2, f2, fx.ann, 2, 0.1f, &w2);

  // stage 2 equals stage 1 plus the two spatial terms on identical inputs
  CHECK(stage1.breakdown.l_sp_plus == 0.0);
  CHECK(stage1.breakdown.l_sp_minus == 0.0);
  CHECK(stage2.breakdown.l_class == doctest::Approx(stage1.breakdown.l_class));
  CHECK(stage2.breakdown.l_mse == doctest::Approx(stage1.breakdown.l_mse));
  CHECK(stage2.breakdown.total ==
        doctest::Approx(stage1.breakdown.total + stage2.breakdown.l_sp_plus + stage2.breakdown.l_sp_minus)
            .epsilon(1e-4));

  // weighted sum identity
  CHECK(stage1.breakdown.total ==
        doctest::Approx(stage1.breakdown.l_class + stage1.breakdown.l_mse + 0.1 * stage1.breakdown.l_rank)
            .epsilon(1e-4));

  // lambda affine property: slope equals the rank term
  Tape t3;
  LcForward f3 = forward_lc(t3, fx.st, batch, BnMode::Eval);
  WarningCounters w3;
  BatchLoss zero_lambda = assemble_lc(t3, f3, fx.ann, 1, 0.0f, &w3);
  CHECK(zero_lambda.breakdown.total ==
        doctest::Approx(stage1.breakdown.total - 0.1 * stage1.breakdown.l_rank).epsilon(1e-4));

  Tape t4;
  LcForward f4 = forward_lc(t4, fx.st, batch, BnMode::Eval);
  WarningCounters w4;
  BatchLoss big_lambda = assemble_lc(t4, f4, fx.ann, 1, 0.7f, &w4);
  CHECK(big_lambda.breakdown.total >= zero_lambda.breakdown.total);
  CHECK(big_lambda.breakdown.total ==
        doctest::Approx(zero_lambda.breakdown.total + 0.7 * stage1.breakdown.l_rank).epsilon(1e-4));
}

TEST_CASE("stage-1 weighted example from fixed terms") {
  // stage 1 with lambda=0.1, L_class=1, L_MSE=2, L_rank=3 -> total 3.3
  LossBreakdown b;
  b.l_class = 1;
  b.l_mse = 2;
  b.l_rank = 3;
  b.lambda = 0.1;
  const double total = b.l_class + b.l_mse + b.lambda * b.l_rank;
  CHECK(total == doctest::Approx(3.3));
}

TEST_CASE("gradient isolation through the assembled losses") {
  LcFixture fx;
  Tensor batch = fx.batch();

  SUBCASE("without the class loss, classification head receives zero gradient") {
    Tape tape;
    LcForward fwd = forward_lc(tape, fx.st, batch, BnMode::Train);
    // batch loss minus its class term: rebuild the count/spatial parts only
    std::vector<Val> parts;
    for (int ni = 0; ni < fwd.n; ++ni) {
      const auto s0 = fx.ann[ni].set_s0();
      const auto s = fx.ann[ni].set_s();
      std::vector<Val> counts;
      std::vector<float> gts;
      for (int ci : s0) {
        counts.push_back(tape.reduce_sum(tape.select_nc(fwd.d, ni, ci)));
        gts.push_back(0.0f);
      }
      for (int ci : s) {
        counts.push_back(tape.reduce_sum(tape.select_nc(fwd.d, ni, ci)));
        gts.push_back(static_cast<float>(fx.ann[ni].exact[ci]));
      }
      if (!counts.empty()) parts.push_back(loss_mse_count(tape, counts, gts));
      if (!s.empty()) {
        std::vector<Val> maps;
        std::vector<Tensor> masks;
        for (int ci : s) {
          SpatialMask sm = spatial_mask(tape.value(fwd.peak[ni][ci]), fx.ann[ni].exact[ci]);
          maps.push_back(tape.select_nc(fwd.d, ni, ci));
          masks.push_back(std::move(sm.mask));
        }
        parts.push_back(loss_sp_plus(tape, maps, masks, nullptr));
      }
    }
    REQUIRE(!parts.empty());
    Val loss = parts[0];
    for (size_t i = 1; i < parts.size(); ++i) loss = tape.add(loss, parts[i]);
    fx.st.zero_grads();
    tape.backward(loss);
    for (float g : fx.st.cls_w2.grad()) CHECK(g == 0.0f);
    for (float g : fx.st.cls_w1.grad()) CHECK(g == 0.0f);
  }
}

TEST_CASE("rlc degenerate split covers the lc index sets") {
  ModelConfig mc;
  mc.framework = Framework::Rlc;
  mc.num_categories = 4;
  mc.image_size = 32;
  ModelState st = ModelState::init(mc, 77);

  SceneSpec spec;
  spec.num_categories = 4;
  spec.image_size = 32;
  spec.max_count = 7;
  spec.min_separation = 8;
  spec.seed = 200;
  Dataset ds = generate_dataset(spec, 3);
  std::vector<LcAnnotation> ann;
  for (const auto& s : ds.samples) ann.push_back(annotate_lc(s, 5));

  Tensor batch({3, 3, 32, 32});
  const size_t per = 3 * 32 * 32;
  for (int i = 0; i < 3; ++i) std::copy_n(ds.samples[i].image.data().begin(), per, batch.data().begin() + i * per);

  RlcSplit all = make_rlc_split(4, 4, 1);  // B empty: LC degenerate case
  CHECK(all.set_b.empty());

  Tape tape;
  RlcForward fwd = forward_rlc(tape, st, batch, BnMode::Eval);
  TermIndexSets rlc_sets;
  assemble_rlc(tape, fwd, ann, all, /*include_s0=*/true, nullptr, &rlc_sets);

  ModelConfig lc_mc = mc;
  lc_mc.framework = Framework::Lc;
  ModelState lc_st = ModelState::init(lc_mc, 77);
  Tape lc_tape;
  LcForward lc_fwd = forward_lc(lc_tape, lc_st, batch, BnMode::Eval);
  TermIndexSets lc_sets;
  assemble_lc(lc_tape, lc_fwd, ann, 1, 0.1f, nullptr, &lc_sets);

  CHECK(rlc_sets.class_cats == lc_sets.class_cats);
  CHECK(rlc_sets.mse_cats == lc_sets.mse_cats);
  CHECK(rlc_sets.rank_cats == lc_sets.rank_cats);
}
