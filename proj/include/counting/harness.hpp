#pragma once

#include <optional>
#include <string>
#include <vector>

#include "counting/config.hpp"
#include "counting/losses.hpp"
#include "counting/metrics.hpp"
#include "counting/model.hpp"
#include "counting/scenegen.hpp"

namespace counting {

struct StepRecord {
  long step = 0;
  int epoch = 0;
  int stage = 0;
  LossBreakdown losses;
};

struct TrainResult {
  std::string checkpoint_dir;
  WarningCounters warnings;
  long steps = 0;
  double wall_clock_sec = 0;
};

// Resolves a dataset directory: accepts either a directory containing
// manifest.json or a parent with a <sub>/ dataset.
std::string resolve_dataset_dir(const std::string& dir, const std::string& sub);

// Generates train/ and test/ datasets under out_dir from the config.
void synth_datasets(const RunConfig& config, const std::string& out_dir);

// Two-stage LC (single-stage RLC) training; deterministic in (config, seed).
// Writes checkpoint/, per-epoch checkpoints, config.json, split.json (RLC)
// and train_log.json under out_dir.
TrainResult train(const RunConfig& config, const std::string& data_dir, const std::string& out_dir);

struct EvalOptions {
  bool dump_density = false;
  std::string dump_dir;
  bool compute_game = true;
};

struct EvalResult {
  MetricsReport report;
  CountTable table;
  std::vector<std::pair<double, double>> totals;  // (gt_total, raw predicted total)
  MetricsReport presence_baseline;                // predict 1 for every present category
};

EvalResult evaluate(const std::string& checkpoint_dir, const std::string& data_dir, const std::string& report_path,
                    const EvalOptions& options = {});

// Predict-1-if-present baseline table for a dataset.
CountTable presence_baseline_table(const Dataset& dataset);

enum class SweepKind { Lambda, TTilde, Split };

struct AblationArm {
  double value = 0;
  std::string run_dir;
  MetricsReport report;
  double banded_mrmse_5_8 = 0;
  double banded_mrmse_nz_5_8 = 0;  // same band; counts in the band are nonzero by construction
  std::string dataset_hash;
};

// Trains one arm per value over a shared dataset; writes sweep.csv in out_dir.
std::vector<AblationArm> ablate(const RunConfig& config, SweepKind sweep, const std::vector<double>& values,
                                const std::string& out_dir);

SweepKind parse_sweep_kind(const std::string& name);

// score-proposals manifest: JSON naming R/Q/density blobs, proposal PGM masks
// and the alpha/beta/gamma weights. Writes a ranked CSV.
void score_proposals_cli(const std::string& manifest_path, const std::string& out_csv);

}  // namespace counting
