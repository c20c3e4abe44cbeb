#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "counting/scenegen.hpp"
#include "counting/tensor.hpp"

namespace counting {

// Raw (unrounded) predictions against integer ground truth, image-major.
struct CountTable {
  int num_images = 0;
  int num_categories = 0;
  std::vector<double> gt;    // [T*C]
  std::vector<double> pred;  // [T*C]

  double& pred_at(int image, int cat) { return pred[static_cast<size_t>(image) * num_categories + cat]; }
  double& gt_at(int image, int cat) { return gt[static_cast<size_t>(image) * num_categories + cat]; }
  double pred_at(int image, int cat) const { return pred[static_cast<size_t>(image) * num_categories + cat]; }
  double gt_at(int image, int cat) const { return gt[static_cast<size_t>(image) * num_categories + cat]; }
};

struct CategoryErrors {
  double rmse = 0;
  double rel_rmse = 0;
  double rmse_nz = 0;      // valid iff nz_images > 0
  double rel_rmse_nz = 0;  // valid iff nz_images > 0
  int nz_images = 0;
};

struct MetricsReport {
  double mrmse = 0, mrmse_nz = 0, mrel_rmse = 0, mrel_rmse_nz = 0;
  std::vector<CategoryErrors> per_category;
  std::optional<double> total_rmse, total_rel_rmse;
  std::vector<double> game;  // GAME(0..n) means, empty when not evaluated
  std::string config_hash;
  uint64_t seed = 0;
};

// Clamp negatives to zero, then round half away from zero.
long round_count(double raw);

// Per-category RMSE / relRMSE (plus nonzero-restricted variants) and their
// unweighted means over categories. Predictions are rounded first.
MetricsReport rmse_family(const CountTable& table);

// RMSE and relRMSE of the per-image (gt_total, pred_total) series.
std::pair<double, double> total_count_metrics(const std::vector<std::pair<double, double>>& totals);

// mRMSE over the images whose ground-truth count lies in [lo, hi]; categories
// with no qualifying image are excluded from the mean.
double banded_mrmse(const CountTable& table, int lo, int hi);

// GAME(n) for one image: points are in density-map pixel coordinates.
double game(const Tensor& pred_density, const std::vector<Point>& gt_points, int n);
double game_dataset(const std::vector<Tensor>& densities, const std::vector<std::vector<Point>>& points, int n);

void write_report_json(const MetricsReport& report, const std::string& path);
void write_report_csv(const MetricsReport& report, const std::string& path);

}  // namespace counting
