#include "counting/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace counting {

namespace {

Val zero(Tape& tape) { return tape.scalar_const(0.0f); }

Val mean_of(Tape& tape, const std::vector<Val>& terms) {
  Val acc = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) acc = tape.add(acc, terms[i]);
  return tape.scale(acc, 1.0f / static_cast<float>(terms.size()));
}

}  // namespace

Val loss_class(Tape& tape, std::span<const Val> scores, std::span<const float> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("loss_class: scores/labels size mismatch");
  if (scores.empty()) throw std::invalid_argument("loss_class: no categories");
  std::vector<Val> terms;
  terms.reserve(scores.size());
  for (size_t i = 0; i < scores.size(); ++i)
    terms.push_back(tape.logistic_bce(scores[i], tape.scalar_const(labels[i])));
  return mean_of(tape, terms);
}

Val loss_sp_plus(Tape& tape, std::span<const Val> density_maps, std::span<const Tensor> masks,
                 WarningCounters* warnings) {
  if (density_maps.size() != masks.size()) throw std::invalid_argument("loss_sp_plus: maps/masks size mismatch");
  if (density_maps.empty()) return zero(tape);
  Val acc = zero(tape);
  for (size_t c = 0; c < density_maps.size(); ++c) {
    double mask_sum = masks[c].sum();
    if (mask_sum <= 0.0) {
      if (warnings != nullptr) ++warnings->empty_masks;
      continue;
    }
    Val mask = tape.constant(masks[c]);
    Val masked_density = tape.mul(density_maps[c], mask);
    Val bce = tape.logistic_bce(masked_density, tape.constant(Tensor::full(masks[c].shape(), 1.0f)));
    Val contrib = tape.reduce_sum(tape.mul(bce, mask));
    acc = tape.add(acc, tape.scale(contrib, static_cast<float>(1.0 / mask_sum)));
  }
  return tape.scale(acc, 1.0f / static_cast<float>(density_maps.size()));
}

Val loss_sp_minus(Tape& tape, std::span<const Val> density_maps) {
  if (density_maps.empty()) return zero(tape);
  std::vector<Val> terms;
  terms.reserve(density_maps.size());
  for (const Val& d : density_maps) {
    Val zeros = tape.constant(Tensor::zeros(tape.value(d).shape()));
    terms.push_back(tape.reduce_mean(tape.logistic_bce(d, zeros)));
  }
  return mean_of(tape, terms);
}

Val loss_mse_count(Tape& tape, std::span<const Val> counts, std::span<const float> gt) {
  if (counts.size() != gt.size()) throw std::invalid_argument("loss_mse_count: counts/gt size mismatch");
  if (counts.empty()) return zero(tape);
  std::vector<Val> terms;
  terms.reserve(counts.size());
  for (size_t i = 0; i < counts.size(); ++i) terms.push_back(tape.square(tape.add_scalar(counts[i], -gt[i])));
  return mean_of(tape, terms);
}

Val loss_rank(Tape& tape, std::span<const Val> counts, float t_tilde) {
  if (counts.empty()) return zero(tape);
  std::vector<Val> terms;
  terms.reserve(counts.size());
  for (const Val& c : counts) terms.push_back(tape.relu(tape.add_scalar(tape.neg(c), t_tilde)));
  return mean_of(tape, terms);
}

RcountLoss loss_rcount(Tape& tape, std::span<const Val> counts_s, std::span<const float> gt_s,
                       std::span<const Val> counts_s_tilde, float t_tilde) {
  RcountLoss out;
  out.mse = loss_mse_count(tape, counts_s, gt_s);
  out.rank = loss_rank(tape, counts_s_tilde, t_tilde);
  out.has_mse = !counts_s.empty();
  out.has_rank = !counts_s_tilde.empty();
  out.total = tape.add(out.mse, out.rank);
  return out;
}

Val loss_tot(Tape& tape, Val t_hat_tot, float t_tot, int z) {
  if (z == 0) return tape.square(tape.add_scalar(t_hat_tot, -t_tot));
  return tape.relu(tape.add_scalar(tape.neg(t_hat_tot), t_tot));
}

namespace {

// Average over images that have the term; absent → not added to the total.
struct TermAverager {
  std::vector<Val> terms;

  void add(Val v) { terms.push_back(v); }
  bool any() const { return !terms.empty(); }
  Val average(Tape& tape) { return mean_of(tape, terms); }
};

float val_scalar(const Tape& tape, Val v) { return tape.value(v)[0]; }

}  // namespace

BatchLoss assemble_lc(Tape& tape, const LcForward& fwd, const std::vector<LcAnnotation>& annotations, int stage,
                      float lambda, WarningCounters* warnings, TermIndexSets* sets) {
  if (stage != 1 && stage != 2) throw std::invalid_argument("assemble_lc: stage must be 1 or 2");
  if (static_cast<int>(annotations.size()) != fwd.n)
    throw std::invalid_argument("assemble_lc: annotation count does not match batch size");
  const int c = static_cast<int>(fwd.s.empty() ? 0 : fwd.s[0].size());
  if (sets != nullptr) *sets = TermIndexSets{};

  TermAverager cls_avg, mse_avg, rank_avg, spp_avg, spm_avg;
  for (int ni = 0; ni < fwd.n; ++ni) {
    const LcAnnotation& ann = annotations[ni];
    const auto s0 = ann.set_s0();
    const auto s = ann.set_s();
    const auto st = ann.set_s_tilde();

    std::vector<float> labels(c, 0.0f);
    for (int ci : s) labels[ci] = 1.0f;
    for (int ci : st) labels[ci] = 1.0f;
    cls_avg.add(loss_class(tape, fwd.s[ni], labels));

    std::vector<Val> counts;
    std::vector<float> gts;
    for (int ci : s0) {
      counts.push_back(tape.reduce_sum(tape.select_nc(fwd.d, ni, ci)));
      gts.push_back(0.0f);
    }
    for (int ci : s) {
      counts.push_back(tape.reduce_sum(tape.select_nc(fwd.d, ni, ci)));
      gts.push_back(static_cast<float>(ann.exact[ci]));
    }
    if (!counts.empty()) mse_avg.add(loss_mse_count(tape, counts, gts));

    std::vector<Val> beyond;
    for (int ci : st) beyond.push_back(tape.reduce_sum(tape.select_nc(fwd.d, ni, ci)));
    if (!beyond.empty()) rank_avg.add(loss_rank(tape, beyond, static_cast<float>(ann.t_tilde)));

    if (stage == 2) {
      if (!s.empty()) {
        std::vector<Val> maps;
        std::vector<Tensor> masks;
        for (int ci : s) {
          SpatialMask sm = spatial_mask(tape.value(fwd.peak[ni][ci]), ann.exact[ci]);
          if (sm.empty && warnings != nullptr) ++warnings->all_zero_peak_maps;
          maps.push_back(tape.select_nc(fwd.d, ni, ci));
          masks.push_back(std::move(sm.mask));
        }
        spp_avg.add(loss_sp_plus(tape, maps, masks, warnings));
      }
      if (!s0.empty()) {
        std::vector<Val> maps;
        for (int ci : s0) maps.push_back(tape.select_nc(fwd.d, ni, ci));
        spm_avg.add(loss_sp_minus(tape, maps));
      }
    }

    if (sets != nullptr) {
      std::vector<int> all(c);
      for (int ci = 0; ci < c; ++ci) all[ci] = ci;
      sets->class_cats.push_back(all);
      std::vector<int> mse_set = s0;
      mse_set.insert(mse_set.end(), s.begin(), s.end());
      std::sort(mse_set.begin(), mse_set.end());
      sets->mse_cats.push_back(mse_set);
      sets->rank_cats.push_back(st);
      sets->sp_plus_cats.push_back(stage == 2 ? s : std::vector<int>{});
      sets->sp_minus_cats.push_back(stage == 2 ? s0 : std::vector<int>{});
    }
  }

  BatchLoss out;
  out.breakdown.lambda = lambda;
  Val total = cls_avg.average(tape);
  out.breakdown.l_class = val_scalar(tape, total);
  if (mse_avg.any()) {
    Val v = mse_avg.average(tape);
    out.breakdown.l_mse = val_scalar(tape, v);
    total = tape.add(total, v);
  }
  if (rank_avg.any()) {
    Val v = rank_avg.average(tape);
    out.breakdown.l_rank = val_scalar(tape, v);
    total = tape.add(total, tape.scale(v, lambda));
  }
  if (stage == 2 && spp_avg.any()) {
    Val v = spp_avg.average(tape);
    out.breakdown.l_sp_plus = val_scalar(tape, v);
    total = tape.add(total, v);
  }
  if (stage == 2 && spm_avg.any()) {
    Val v = spm_avg.average(tape);
    out.breakdown.l_sp_minus = val_scalar(tape, v);
    total = tape.add(total, v);
  }
  out.total = total;
  out.breakdown.total = val_scalar(tape, total);
  return out;
}

BatchLoss assemble_rlc(Tape& tape, const RlcForward& fwd, const std::vector<LcAnnotation>& annotations,
                       const RlcSplit& split, bool include_s0, WarningCounters* warnings, TermIndexSets* sets) {
  (void)warnings;
  if (static_cast<int>(annotations.size()) != fwd.n)
    throw std::invalid_argument("assemble_rlc: annotation count does not match batch size");
  const int c = static_cast<int>(fwd.s.empty() ? 0 : fwd.s[0].size());
  if (static_cast<int>(split.in_a.size()) != c)
    throw std::invalid_argument("assemble_rlc: split category count does not match model");
  if (sets != nullptr) *sets = TermIndexSets{};

  TermAverager cls_avg, rc_mse_avg, rc_rank_avg, tot_avg;
  for (int ni = 0; ni < fwd.n; ++ni) {
    const LcAnnotation& ann = annotations[ni];
    std::vector<int> s_a, st_a, s0_a;
    std::vector<int> b_positive;
    for (int ci = 0; ci < c; ++ci) {
      if (split.in_a[ci]) {
        if (ann.labels[ci] == LcLabel::Exact) s_a.push_back(ci);
        if (ann.labels[ci] == LcLabel::Beyond) st_a.push_back(ci);
        if (ann.labels[ci] == LcLabel::Absent) s0_a.push_back(ci);
      } else if (ann.labels[ci] != LcLabel::Absent) {
        b_positive.push_back(ci);
      }
    }

    std::vector<float> labels(c, 0.0f);
    for (int ci = 0; ci < c; ++ci)
      if (ann.labels[ci] != LcLabel::Absent) labels[ci] = 1.0f;
    cls_avg.add(loss_class(tape, fwd.s[ni], labels));

    std::vector<Val> counts_s;
    std::vector<float> gt_s;
    for (int ci : s_a) {
      counts_s.push_back(tape.reduce_sum(tape.select_nc(fwd.d_hat, ni, ci)));
      gt_s.push_back(static_cast<float>(ann.exact[ci]));
    }
    if (include_s0) {
      for (int ci : s0_a) {
        counts_s.push_back(tape.reduce_sum(tape.select_nc(fwd.d_hat, ni, ci)));
        gt_s.push_back(0.0f);
      }
    }
    std::vector<Val> counts_st;
    for (int ci : st_a) counts_st.push_back(tape.reduce_sum(tape.select_nc(fwd.d_hat, ni, ci)));

    if (!counts_s.empty()) rc_mse_avg.add(loss_mse_count(tape, counts_s, gt_s));
    if (!counts_st.empty()) rc_rank_avg.add(loss_rank(tape, counts_st, static_cast<float>(ann.t_tilde)));

    float t_tot = 0.0f;
    for (int ci : s_a) t_tot += static_cast<float>(ann.exact[ci]);
    t_tot += static_cast<float>(ann.t_tilde) * static_cast<float>(st_a.size());
    const int z = static_cast<int>(st_a.size() + b_positive.size());
    Val t_hat_tot = tape.reduce_sum(tape.select_nc(fwd.d_tot, ni, 0));
    tot_avg.add(loss_tot(tape, t_hat_tot, t_tot, z));

    if (sets != nullptr) {
      std::vector<int> all(c);
      for (int ci = 0; ci < c; ++ci) all[ci] = ci;
      sets->class_cats.push_back(all);
      std::vector<int> mse_set = include_s0 ? s0_a : std::vector<int>{};
      mse_set.insert(mse_set.end(), s_a.begin(), s_a.end());
      std::sort(mse_set.begin(), mse_set.end());
      sets->mse_cats.push_back(mse_set);
      sets->rank_cats.push_back(st_a);
    }
  }

  BatchLoss out;
  Val total = cls_avg.average(tape);
  out.breakdown.l_class = val_scalar(tape, total);
  if (rc_mse_avg.any()) {
    Val v = rc_mse_avg.average(tape);
    out.breakdown.l_rcount_mse = val_scalar(tape, v);
    total = tape.add(total, v);
  }
  if (rc_rank_avg.any()) {
    Val v = rc_rank_avg.average(tape);
    out.breakdown.l_rcount_rank = val_scalar(tape, v);
    total = tape.add(total, v);
  }
  if (tot_avg.any()) {
    Val v = tot_avg.average(tape);
    out.breakdown.l_tot = val_scalar(tape, v);
    total = tape.add(total, v);
  }
  out.total = total;
  out.breakdown.total = val_scalar(tape, total);
  return out;
}

}  // namespace counting
