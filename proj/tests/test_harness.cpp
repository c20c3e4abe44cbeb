#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "counting/harness.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace counting;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

RunConfig tiny_config(const std::string& framework = "lc") {
  RunConfig c;
  c.framework = framework;
  c.num_categories = 4;
  c.image_size = 32;
  c.max_count = 7;
  c.min_separation = 8;
  c.n_train = 24;
  c.n_test = 12;
  c.batch_size = 8;
  c.epochs_stage1 = 1;
  c.epochs_stage2 = 1;
  c.seed = 5;
  return c;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config parsing rejects unknown keys and bad values") {
  CHECK_THROWS_WITH_AS(RunConfig::from_json_string(R"({"framework":"lc","mystery":1})"),
                       doctest::Contains("mystery"), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_json_string(R"({"framework":"xyz"})"), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_json_string(R"({"t_tilde":7})"), std::invalid_argument);  // max_count too low
  CHECK_THROWS_AS(RunConfig::from_json_string("not json"), std::invalid_argument);
  RunConfig c = RunConfig::from_json_string(R"({"framework":"rlc","annotated_count":6})");
  CHECK(c.is_rlc());
  CHECK(c.effective_annotated_count() == 6);
  // defaults follow the training recipe
  CHECK(c.t_tilde == 5);
  CHECK(c.lambda == doctest::Approx(0.1f));
  CHECK(c.batch_size == 16);
  CHECK(c.momentum == doctest::Approx(0.9f));
  CHECK(c.weight_decay == doctest::Approx(1e-4f));
  CHECK(c.lr_backbone == doctest::Approx(1e-4f));
  CHECK(c.lr_heads == doctest::Approx(1e-2f));
}

TEST_CASE("config hash is stable and key-sensitive") {
  RunConfig a = tiny_config();
  RunConfig b = tiny_config();
  CHECK(a.hash() == b.hash());
  b.lambda = 0.2f;
  CHECK(a.hash() != b.hash());
}

TEST_CASE("train determinism: identical config gives identical params.bin") {
  TempDir dir("counting_harness_det");
  RunConfig config = tiny_config();
  synth_datasets(config, (dir.path / "data").string());

  train(config, (dir.path / "data").string(), (dir.path / "run1").string());
  train(config, (dir.path / "data").string(), (dir.path / "run2").string());
  CHECK(read_text(dir.path / "run1" / "checkpoint" / "params.bin") ==
        read_text(dir.path / "run2" / "checkpoint" / "params.bin"));

  EvalResult e1 = evaluate((dir.path / "run1" / "checkpoint").string(), (dir.path / "data").string(),
                           (dir.path / "run1" / "report.json").string());
  EvalResult e2 = evaluate((dir.path / "run2" / "checkpoint").string(), (dir.path / "data").string(),
                           (dir.path / "run2" / "report.json").string());
  CHECK(read_text(dir.path / "run1" / "report.json") == read_text(dir.path / "run2" / "report.json"));
  CHECK(e1.report.mrmse == e2.report.mrmse);
}

TEST_CASE("training log: staging gates and loss rows") {
  TempDir dir("counting_harness_log");
  RunConfig config = tiny_config();
  config.lambda = 0.0f;
  synth_datasets(config, (dir.path / "data").string());
  TrainResult result = train(config, (dir.path / "data").string(), (dir.path / "run").string());

  json log = json::parse(read_text(dir.path / "run" / "train_log.json"));
  const auto& steps = log.at("steps");
  // 24 samples / batch 8 = 3 steps per epoch, 2 epochs
  CHECK(steps.size() == 6);
  CHECK(result.steps == 6);
  for (const auto& row : steps) {
    CHECK(row.at("l_rank_weighted").get<double>() == 0.0);  // lambda = 0
    const int stage = row.at("stage").get<int>();
    if (row.at("epoch").get<int>() == 0) {
      CHECK(stage == 1);
      CHECK(row.at("l_sp_plus").get<double>() == 0.0);
      CHECK(row.at("l_sp_minus").get<double>() == 0.0);
    } else {
      CHECK(stage == 2);
    }
  }

  SUBCASE("epochs_stage2=0 never emits spatial entries") {
    RunConfig c2 = config;
    c2.epochs_stage2 = 0;
    c2.epochs_stage1 = 2;
    train(c2, (dir.path / "data").string(), (dir.path / "run2").string());
    json log2 = json::parse(read_text(dir.path / "run2" / "train_log.json"));
    for (const auto& row : log2.at("steps")) {
      CHECK(row.at("stage").get<int>() == 1);
      CHECK(row.at("l_sp_plus").get<double>() == 0.0);
      CHECK(row.at("l_sp_minus").get<double>() == 0.0);
    }
  }
}

TEST_CASE("rlc training writes a persisted split and trains") {
  TempDir dir("counting_harness_rlc");
  RunConfig config = tiny_config("rlc");
  config.annotated_count = 2;
  synth_datasets(config, (dir.path / "data").string());
  TrainResult result = train(config, (dir.path / "data").string(), (dir.path / "run").string());
  CHECK(result.steps == 6);

  json split = json::parse(read_text(dir.path / "run" / "split.json"));
  CHECK(split.at("set_a").size() == 2);
  CHECK(split.at("set_b").size() == 2);

  EvalResult ev = evaluate(result.checkpoint_dir, (dir.path / "data").string(),
                           (dir.path / "run" / "report.json").string());
  CHECK(ev.report.total_rmse.has_value());
  CHECK(std::isfinite(ev.report.mrmse));
}

TEST_CASE("untrained model predicts zero everywhere, matching the all-zeros baseline") {
  TempDir dir("counting_harness_zero");
  RunConfig config = tiny_config();
  config.epochs_stage1 = 0;
  config.epochs_stage2 = 0;
  synth_datasets(config, (dir.path / "data").string());
  TrainResult result = train(config, (dir.path / "data").string(), (dir.path / "run").string());
  EvalResult ev =
      evaluate(result.checkpoint_dir, (dir.path / "data").string(), (dir.path / "run" / "report.json").string());

  // zero-init heads -> s = 0 -> gated to zero counts
  for (double p : ev.table.pred) CHECK(p == 0.0);
  CountTable zeros = ev.table;
  for (auto& p : zeros.pred) p = 0.0;
  CHECK(ev.report.mrmse == doctest::Approx(rmse_family(zeros).mrmse));
}

TEST_CASE("gating consistency on a trained model") {
  TempDir dir("counting_harness_gate");
  RunConfig config = tiny_config();
  synth_datasets(config, (dir.path / "data").string());
  TrainResult tr = train(config, (dir.path / "data").string(), (dir.path / "run").string());
  EvalResult ev =
      evaluate(tr.checkpoint_dir, (dir.path / "data").string(), (dir.path / "run" / "report.json").string());
  // every reported zero must come from gating or an actually-zero density sum;
  // nonzero predictions imply a positive confidence, so just check finiteness
  // and that GAME(0) >= 0 was produced for all four orders
  REQUIRE(ev.report.game.size() == 4);
  for (double g : ev.report.game) CHECK(g >= 0.0);
}

TEST_CASE("ablate writes one row per value with a shared dataset hash") {
  TempDir dir("counting_harness_ablate");
  RunConfig config = tiny_config();
  config.epochs_stage1 = 1;
  config.epochs_stage2 = 0;
  auto arms = ablate(config, SweepKind::Lambda, {0.0, 0.1}, (dir.path / "sweep").string());
  REQUIRE(arms.size() == 2);
  CHECK(arms[0].dataset_hash == arms[1].dataset_hash);
  CHECK(!arms[0].dataset_hash.empty());

  std::string csv = read_text(dir.path / "sweep" / "sweep.csv");
  CHECK(csv.find("value,dataset_hash") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 rows

  CHECK_THROWS_AS(parse_sweep_kind("bogus"), std::invalid_argument);
}

TEST_CASE("evaluate rejects mismatched dataset") {
  TempDir dir("counting_harness_mismatch");
  RunConfig config = tiny_config();
  synth_datasets(config, (dir.path / "data").string());
  TrainResult tr = train(config, (dir.path / "data").string(), (dir.path / "run").string());

  RunConfig other = tiny_config();
  other.num_categories = 6;
  synth_datasets(other, (dir.path / "other").string());
  CHECK_THROWS_AS(
      evaluate(tr.checkpoint_dir, (dir.path / "other").string(), (dir.path / "x.json").string()),
      std::runtime_error);
}
