#include "counting/metrics.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace counting {

using nlohmann::json;

long round_count(double raw) {
  if (raw < 0.0) raw = 0.0;
  return static_cast<long>(std::floor(raw + 0.5));
}

MetricsReport rmse_family(const CountTable& table) {
  if (table.num_images < 1) throw std::invalid_argument("rmse_family: empty table");
  if (table.gt.size() != table.pred.size() ||
      table.gt.size() != static_cast<size_t>(table.num_images) * table.num_categories)
    throw std::invalid_argument("rmse_family: table buffers do not match dimensions");

  MetricsReport report;
  report.per_category.resize(table.num_categories);
  const int t = table.num_images;

  double sum_rmse = 0, sum_rel = 0, sum_rmse_nz = 0, sum_rel_nz = 0;
  int nz_categories = 0;
  for (int c = 0; c < table.num_categories; ++c) {
    double se = 0, rel_se = 0, se_nz = 0, rel_se_nz = 0;
    int nz = 0;
    for (int i = 0; i < t; ++i) {
      const double gt = table.gt_at(i, c);
      const double pred = static_cast<double>(round_count(table.pred_at(i, c)));
      const double d2 = (gt - pred) * (gt - pred);
      const double rel = d2 / (gt + 1.0);
      se += d2;
      rel_se += rel;
      if (gt > 0.0) {
        se_nz += d2;
        rel_se_nz += rel;
        ++nz;
      }
    }
    CategoryErrors& e = report.per_category[c];
    e.rmse = std::sqrt(se / t);
    e.rel_rmse = std::sqrt(rel_se / t);
    e.nz_images = nz;
    sum_rmse += e.rmse;
    sum_rel += e.rel_rmse;
    if (nz > 0) {
      e.rmse_nz = std::sqrt(se_nz / nz);
      e.rel_rmse_nz = std::sqrt(rel_se_nz / nz);
      sum_rmse_nz += e.rmse_nz;
      sum_rel_nz += e.rel_rmse_nz;
      ++nz_categories;
    }
  }
  report.mrmse = sum_rmse / table.num_categories;
  report.mrel_rmse = sum_rel / table.num_categories;
  if (nz_categories > 0) {
    report.mrmse_nz = sum_rmse_nz / nz_categories;
    report.mrel_rmse_nz = sum_rel_nz / nz_categories;
  }
  return report;
}

std::pair<double, double> total_count_metrics(const std::vector<std::pair<double, double>>& totals) {
  if (totals.empty()) throw std::invalid_argument("total_count_metrics: empty series");
  double se = 0, rel_se = 0;
  for (const auto& [gt, raw] : totals) {
    const double pred = static_cast<double>(round_count(raw));
    const double d2 = (gt - pred) * (gt - pred);
    se += d2;
    rel_se += d2 / (gt + 1.0);
  }
  const double n = static_cast<double>(totals.size());
  return {std::sqrt(se / n), std::sqrt(rel_se / n)};
}

double banded_mrmse(const CountTable& table, int lo, int hi) {
  double sum = 0;
  int included = 0;
  for (int c = 0; c < table.num_categories; ++c) {
    double se = 0;
    int n = 0;
    for (int i = 0; i < table.num_images; ++i) {
      const double gt = table.gt_at(i, c);
      if (gt < lo || gt > hi) continue;
      const double pred = static_cast<double>(round_count(table.pred_at(i, c)));
      se += (gt - pred) * (gt - pred);
      ++n;
    }
    if (n > 0) {
      sum += std::sqrt(se / n);
      ++included;
    }
  }
  return included > 0 ? sum / included : 0.0;
}

double game(const Tensor& pred_density, const std::vector<Point>& gt_points, int n) {
  if (pred_density.rank() != 2)
    throw std::invalid_argument("game: expected [H,W] density, got " + pred_density.shape_str());
  if (n < 0 || n > 3) throw std::invalid_argument("game: n must be in [0,3]");
  const int h = pred_density.dim(0);
  const int w = pred_density.dim(1);
  for (const auto& p : gt_points) {
    if (p.row < 0 || p.row >= h || p.col < 0 || p.col >= w)
      throw std::invalid_argument("game: point (" + std::to_string(p.row) + "," + std::to_string(p.col) +
                                  ") outside density map " + pred_density.shape_str());
  }
  const int cells = 1 << n;
  // zero-padded right/bottom when the map is not divisible by 2^n
  const int cell_h = (h + cells - 1) / cells;
  const int cell_w = (w + cells - 1) / cells;

  double total = 0;
  for (int gi = 0; gi < cells; ++gi) {
    for (int gj = 0; gj < cells; ++gj) {
      const int r0 = gi * cell_h, r1 = std::min(h, r0 + cell_h);
      const int c0 = gj * cell_w, c1 = std::min(w, c0 + cell_w);
      double mass = 0;
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) mass += pred_density[static_cast<size_t>(r) * w + c];
      int count = 0;
      for (const auto& p : gt_points)
        if (p.row >= r0 && p.row < r1 && p.col >= c0 && p.col < c1) ++count;
      total += std::fabs(mass - static_cast<double>(count));
    }
  }
  return total;
}

double game_dataset(const std::vector<Tensor>& densities, const std::vector<std::vector<Point>>& points, int n) {
  if (densities.size() != points.size() || densities.empty())
    throw std::invalid_argument("game_dataset: size mismatch or empty input");
  double acc = 0;
  for (size_t i = 0; i < densities.size(); ++i) acc += game(densities[i], points[i], n);
  return acc / static_cast<double>(densities.size());
}

void write_report_json(const MetricsReport& report, const std::string& path) {
  json per_cat = json::array();
  for (size_t c = 0; c < report.per_category.size(); ++c) {
    const auto& e = report.per_category[c];
    per_cat.push_back({{"category", c},
                       {"rmse", e.rmse},
                       {"rel_rmse", e.rel_rmse},
                       {"rmse_nz", e.nz_images > 0 ? json(e.rmse_nz) : json()},
                       {"rel_rmse_nz", e.nz_images > 0 ? json(e.rel_rmse_nz) : json()},
                       {"nz_images", e.nz_images}});
  }
  json j = {{"mrmse", report.mrmse},
            {"mrmse_nz", report.mrmse_nz},
            {"mrel_rmse", report.mrel_rmse},
            {"mrel_rmse_nz", report.mrel_rmse_nz},
            {"per_category", per_cat},
            {"config_hash", report.config_hash},
            {"seed", report.seed}};
  if (report.total_rmse) j["total_rmse"] = *report.total_rmse;
  if (report.total_rel_rmse) j["total_rel_rmse"] = *report.total_rel_rmse;
  if (!report.game.empty()) j["game"] = report.game;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
}

void write_report_csv(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "category_id,rmse,rmse_nz,relrmse,relrmse_nz\n";
  char line[256];
  for (size_t c = 0; c < report.per_category.size(); ++c) {
    const auto& e = report.per_category[c];
    if (e.nz_images > 0)
      std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f,%.6f,%.6f\n", c, e.rmse, e.rmse_nz, e.rel_rmse,
                    e.rel_rmse_nz);
    else
      std::snprintf(line, sizeof(line), "%zu,%.6f,,%.6f,\n", c, e.rmse, e.rel_rmse);
    out << line;
  }
  std::snprintf(line, sizeof(line), "mean,%.6f,%.6f,%.6f,%.6f\n", report.mrmse, report.mrmse_nz, report.mrel_rmse,
                report.mrel_rmse_nz);
  out << line;
  if (report.total_rmse) {
    std::snprintf(line, sizeof(line), "total,%.6f,,%.6f,\n", *report.total_rmse, *report.total_rel_rmse);
    out << line;
  }
}

}  // namespace counting
