#pragma once

#include <span>
#include <vector>

#include "counting/model.hpp"
#include "counting/scenegen.hpp"
#include "counting/tape.hpp"

namespace counting {

struct WarningCounters {
  long all_zero_peak_maps = 0;  // spatial_mask saw no nonzero peaks
  long empty_masks = 0;         // sum(B^c)=0 reached the spatial loss

  long total() const { return all_zero_peak_maps + empty_masks; }
};

struct LossBreakdown {
  double l_class = 0, l_sp_plus = 0, l_sp_minus = 0, l_mse = 0, l_rank = 0;
  double l_rcount_mse = 0, l_rcount_rank = 0, l_tot = 0;
  double lambda = 0;
  double total = 0;
};

// Mean multi-label soft-margin loss over per-category confidence scores.
Val loss_class(Tape& tape, std::span<const Val> scores, std::span<const float> labels);

// Eq. 4 spatial loss over categories in S; masks are detached constants.
// A mask with zero sum contributes 0 and bumps the warning counter.
Val loss_sp_plus(Tape& tape, std::span<const Val> density_maps, std::span<const Tensor> masks,
                 WarningCounters* warnings);

// Eq. 5 suppression over categories in S0 (zero-valued target everywhere).
Val loss_sp_minus(Tape& tape, std::span<const Val> density_maps);

// Eq. 6 MSE over the S0 and S counts.
Val loss_mse_count(Tape& tape, std::span<const Val> counts, std::span<const float> gt);

// Eq. 7 zero-margin ranking over S-tilde counts.
Val loss_rank(Tape& tape, std::span<const Val> counts, float t_tilde);

struct RcountLoss {
  Val total;
  Val mse;
  Val rank;
  bool has_mse = false;
  bool has_rank = false;
};

// Eq. 16 reduced-count loss; S / S-tilde already restricted to set A.
RcountLoss loss_rcount(Tape& tape, std::span<const Val> counts_s, std::span<const float> gt_s,
                       std::span<const Val> counts_s_tilde, float t_tilde);

// Eqs. 11-13 total-count loss; z = |S-tilde| + |B'| gates MSE vs rank form.
Val loss_tot(Tape& tape, Val t_hat_tot, float t_tot, int z);

struct BatchLoss {
  Val total;
  LossBreakdown breakdown;
};

// Per-image category index sets each loss term was computed over; used by
// tests that compare LC and RLC supervision coverage.
struct TermIndexSets {
  std::vector<std::vector<int>> class_cats, mse_cats, rank_cats, sp_plus_cats, sp_minus_cats;
};

// Mini-batch LC objective. Per-image terms are averaged over the images that
// possess the term; stage 1 excludes the spatial losses.
BatchLoss assemble_lc(Tape& tape, const LcForward& fwd, const std::vector<LcAnnotation>& annotations, int stage,
                      float lambda, WarningCounters* warnings, TermIndexSets* sets = nullptr);

// Mini-batch RLC objective: L_class + L_rcount + L_tot. include_s0 adds the
// optional absent-category MSE term to L_rcount.
BatchLoss assemble_rlc(Tape& tape, const RlcForward& fwd, const std::vector<LcAnnotation>& annotations,
                       const RlcSplit& split, bool include_s0, WarningCounters* warnings,
                       TermIndexSets* sets = nullptr);

}  // namespace counting
