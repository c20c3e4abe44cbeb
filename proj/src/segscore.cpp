#include "counting/segscore.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace counting {

namespace {

void check_binary(const Tensor& mask, const char* what) {
  for (size_t i = 0; i < mask.numel(); ++i)
    if (mask[i] != 0.0f && mask[i] != 1.0f)
      throw std::invalid_argument(std::string(what) + ": mask must be {0,1}-valued");
}

double overlap_sum(const Tensor& a, const Tensor& b) {
  double acc = 0;
  for (size_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

}  // namespace

double density_penalty(const Tensor& density, const Tensor& proposal) {
  if (!density.same_shape(proposal))
    throw std::invalid_argument("density_penalty: shape mismatch " + density.shape_str() + " vs " +
                                proposal.shape_str());
  return std::fabs(1.0 - overlap_sum(density, proposal));
}

Tensor contour_mask(const Tensor& proposal) {
  if (proposal.rank() != 2) throw std::invalid_argument("contour_mask: expected [H,W], got " + proposal.shape_str());
  check_binary(proposal, "contour_mask");
  const int h = proposal.dim(0), w = proposal.dim(1);
  Tensor out({h, w});
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      float dilated = 0.0f, eroded = 1.0f;
      for (int di = -1; di <= 1; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
          const int ii = i + di, jj = j + dj;
          // out-of-bounds treated as background
          const float v = (ii < 0 || ii >= h || jj < 0 || jj >= w)
                              ? 0.0f
                              : proposal[static_cast<size_t>(ii) * w + jj];
          dilated = std::max(dilated, v);
          eroded = std::min(eroded, v);
        }
      }
      out[static_cast<size_t>(i) * w + j] = dilated - eroded;
    }
  }
  return out;
}

std::vector<std::pair<int, double>> score_proposals(const ProposalSet& set) {
  if (!std::isfinite(set.alpha) || !std::isfinite(set.beta) || !std::isfinite(set.gamma))
    throw std::invalid_argument("score_proposals: weights must be finite");
  std::vector<std::pair<int, double>> ranked;
  ranked.reserve(set.proposals.size());
  for (size_t r = 0; r < set.proposals.size(); ++r) {
    const Tensor& pr = set.proposals[r];
    if (!pr.same_shape(set.peak_response))
      throw std::invalid_argument("score_proposals: proposal " + std::to_string(r) + " shape " + pr.shape_str() +
                                  " does not match maps " + set.peak_response.shape_str());
    check_binary(pr, "score_proposals");
    const Tensor contour = contour_mask(pr);
    const double score = set.alpha * overlap_sum(set.peak_response, pr) + overlap_sum(set.peak_response, contour) -
                         set.beta * overlap_sum(set.background, pr) - set.gamma * density_penalty(set.density, pr);
    ranked.emplace_back(static_cast<int>(r), score);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return ranked;
}

}  // namespace counting
