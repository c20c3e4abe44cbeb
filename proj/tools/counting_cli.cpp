#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "counting/dataset_io.hpp"
#include "counting/harness.hpp"

using namespace counting;

int main(int argc, char** argv) {
  CLI::App app{"Partially supervised object counting on synthetic scenes"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir, checkpoint_dir, report_path, manifest_path;
  std::string sweep_name, values_csv;
  bool dump_density = false;

  auto* synth = app.add_subcommand("synth", "Generate train/test datasets from a config");
  synth->add_option("--config", config_path, "Run config JSON")->required();
  synth->add_option("--out", out_dir, "Output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", config_path, "Run config JSON")->required();
  train_cmd->add_option("--data", data_dir, "Dataset directory (generated when absent)")->required();
  train_cmd->add_option("--out", out_dir, "Run output directory");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint_dir, "Checkpoint directory")->required();
  eval_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  eval_cmd->add_option("--report", report_path, "Report JSON output path")->required();
  eval_cmd->add_flag("--dump-density", dump_density, "Write per-map PGM density dumps");

  auto* ablate_cmd = app.add_subcommand("ablate", "Train one arm per sweep value");
  ablate_cmd->add_option("--config", config_path, "Run config JSON")->required();
  ablate_cmd->add_option("--sweep", sweep_name, "lambda|t_tilde|split")->required();
  ablate_cmd->add_option("--values", values_csv, "Comma-separated sweep values")->required();
  ablate_cmd->add_option("--out", out_dir, "Sweep output directory")->required();

  auto* score_cmd = app.add_subcommand("score-proposals", "Rank proposals by density-penalized score");
  score_cmd->add_option("--manifest", manifest_path, "Proposal-set manifest JSON")->required();
  score_cmd->add_option("--out", report_path, "Ranked CSV output path")->required();

  auto* ppm_cmd = app.add_subcommand("export-ppm", "Write dataset images as PPM files");
  ppm_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  ppm_cmd->add_option("--out", out_dir, "PPM output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      synth_datasets(RunConfig::from_file(config_path), out_dir);
      std::printf("datasets written to %s\n", out_dir.c_str());
    } else if (train_cmd->parsed()) {
      RunConfig config = RunConfig::from_file(config_path);
      if (out_dir.empty()) out_dir = config.output_dir;
      if (out_dir.empty()) throw std::invalid_argument("train: no output directory (--out or config output_dir)");
      TrainResult result = train(config, data_dir, out_dir);
      std::printf("trained %ld steps in %.1fs, checkpoint at %s\n", result.steps, result.wall_clock_sec,
                  result.checkpoint_dir.c_str());
    } else if (eval_cmd->parsed()) {
      EvalOptions options;
      options.dump_density = dump_density;
      options.dump_dir = report_path + ".density";
      EvalResult result = evaluate(checkpoint_dir, data_dir, report_path, options);
      std::printf("mRMSE %.4f  mRMSE-nz %.4f  m-relRMSE %.4f  total RMSE %.4f\n", result.report.mrmse,
                  result.report.mrmse_nz, result.report.mrel_rmse, result.report.total_rmse.value_or(-1.0));
    } else if (ablate_cmd->parsed()) {
      std::vector<double> values;
      for (size_t pos = 0; pos < values_csv.size();) {
        size_t comma = values_csv.find(',', pos);
        if (comma == std::string::npos) comma = values_csv.size();
        values.push_back(std::stod(values_csv.substr(pos, comma - pos)));
        pos = comma + 1;
      }
      auto arms = ablate(RunConfig::from_file(config_path), parse_sweep_kind(sweep_name), values, out_dir);
      for (const auto& arm : arms)
        std::printf("value %g: mRMSE %.4f  banded(5..8) %.4f\n", arm.value, arm.report.mrmse, arm.banded_mrmse_5_8);
    } else if (score_cmd->parsed()) {
      score_proposals_cli(manifest_path, report_path);
      std::printf("ranking written to %s\n", report_path.c_str());
    } else if (ppm_cmd->parsed()) {
      export_ppm(load_dataset(resolve_dataset_dir(data_dir, "train")), out_dir);
      std::printf("ppm files written to %s\n", out_dir.c_str());
    }
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
