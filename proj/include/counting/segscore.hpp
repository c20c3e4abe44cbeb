#pragma once

#include <string>
#include <utility>
#include <vector>

#include "counting/tensor.hpp"

namespace counting {

// Inputs for density-penalized proposal scoring. Peak response map R,
// background mask Q and the density map are precomputed inputs.
struct ProposalSet {
  std::vector<Tensor> proposals;  // binary masks P_r, [H,W]
  Tensor peak_response;           // R
  Tensor background;              // Q
  Tensor density;                 // D^c
  float alpha = 0;
  float beta = 0;
  float gamma = 0;
};

// d_p = |1 - sum(D^c .* P_r)|
double density_penalty(const Tensor& density, const Tensor& proposal);

// Morphological gradient with a 3x3 all-ones structuring element:
// dilation(P) - erosion(P), values in {0,1}.
Tensor contour_mask(const Tensor& proposal);

// Score = alpha*(R*P_r) + R*contour(P_r) - beta*(Q*P_r) - gamma*d_p, sorted
// descending; ties broken by lower proposal index.
std::vector<std::pair<int, double>> score_proposals(const ProposalSet& set);

}  // namespace counting
