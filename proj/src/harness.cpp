#include "counting/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "counting/checkpoint.hpp"
#include "counting/dataset_io.hpp"
#include "counting/pgm.hpp"
#include "counting/segscore.hpp"
#include "json.hpp"

namespace counting {

namespace fs = std::filesystem;
using nlohmann::json;

std::string resolve_dataset_dir(const std::string& dir, const std::string& sub) {
  if (fs::exists(fs::path(dir) / "manifest.json")) return dir;
  const fs::path nested = fs::path(dir) / sub;
  if (fs::exists(nested / "manifest.json")) return nested.string();
  throw std::runtime_error("no dataset found at " + dir + " (or " + nested.string() + ")");
}

namespace {

SceneSpec scene_spec_from(const RunConfig& config, uint64_t seed) {
  SceneSpec spec;
  spec.num_categories = config.num_categories;
  spec.image_size = config.image_size;
  spec.max_count = config.max_count;
  spec.zero_probability = config.zero_probability;
  spec.min_separation = config.min_separation;
  spec.glyph_radius = config.glyph_radius;
  spec.seed = seed;
  return spec;
}

std::string dataset_hash(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "images.bin", std::ios::binary);
  if (!in) return "";
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a64_hex(bytes);
}

json breakdown_to_json(const LossBreakdown& b) {
  return json{{"l_class", b.l_class},
              {"l_sp_plus", b.l_sp_plus},
              {"l_sp_minus", b.l_sp_minus},
              {"l_mse", b.l_mse},
              {"l_rank", b.l_rank},
              {"l_rank_weighted", b.lambda * b.l_rank},
              {"l_rcount_mse", b.l_rcount_mse},
              {"l_rcount_rank", b.l_rcount_rank},
              {"l_tot", b.l_tot},
              {"total", b.total}};
}

Tensor batch_images(const Dataset& ds, const std::vector<int>& order, size_t first, int batch) {
  const int s = ds.spec.image_size;
  Tensor out({batch, 3, s, s});
  const size_t per = 3 * static_cast<size_t>(s) * s;
  for (int b = 0; b < batch; ++b) {
    const auto& img = ds.samples[order[first + b]].image;
    std::copy_n(img.data().data(), per, out.data().data() + b * per);
  }
  return out;
}

}  // namespace

void synth_datasets(const RunConfig& config, const std::string& out_dir) {
  config.validate();
  fs::create_directories(out_dir);
  Dataset train_ds = generate_dataset(scene_spec_from(config, config.seed), config.n_train);
  save_dataset(train_ds, (fs::path(out_dir) / "train").string());
  Dataset test_ds = generate_dataset(scene_spec_from(config, config.seed + 1), config.n_test);
  save_dataset(test_ds, (fs::path(out_dir) / "test").string());
}

TrainResult train(const RunConfig& config, const std::string& data_dir, const std::string& out_dir) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);
  config.save((fs::path(out_dir) / "config.json").string());

  std::string train_dir;
  try {
    train_dir = resolve_dataset_dir(data_dir, "train");
  } catch (const std::runtime_error&) {
    synth_datasets(config, data_dir);
    train_dir = (fs::path(data_dir) / "train").string();
  }
  Dataset ds = load_dataset(train_dir);
  if (ds.spec.num_categories != config.num_categories || ds.spec.image_size != config.image_size)
    throw std::runtime_error("train: dataset does not match config (categories/image size)");

  ModelConfig mc;
  mc.framework = config.is_rlc() ? Framework::Rlc : Framework::Lc;
  mc.num_categories = config.num_categories;
  mc.image_size = config.image_size;
  ModelState model = ModelState::init(mc, config.seed);

  RlcSplit split;
  if (config.is_rlc()) {
    split = make_rlc_split(config.num_categories, config.effective_annotated_count(), config.seed ^ 0x73706c6974ULL);
    json sj = {{"set_a", split.set_a}, {"set_b", split.set_b}};
    std::ofstream sf(fs::path(out_dir) / "split.json", std::ios::binary);
    sf << sj.dump(2) << "\n";
  }

  SgdState opt;
  opt.momentum_coef = config.momentum;
  opt.weight_decay = config.weight_decay;
  for (auto& [name, t] : model.named_params())
    opt.add_param(t, model.is_backbone_param(name) ? config.lr_backbone : config.lr_heads);

  std::vector<LcAnnotation> all_ann;
  all_ann.reserve(ds.samples.size());
  for (const auto& s : ds.samples) all_ann.push_back(annotate_lc(s, config.t_tilde));

  const int n = static_cast<int>(ds.samples.size());
  const int bs = std::min(config.batch_size, n);
  const int steps_per_epoch = n / bs;  // last incomplete mini-batch dropped
  const int total_epochs = config.epochs_stage1 + config.epochs_stage2;

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng shuffle_rng = Rng(config.seed).fork(0x7368756666ULL);

  TrainResult result;
  std::vector<StepRecord> log;
  long step = 0;
  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    const int stage = epoch < config.epochs_stage1 ? 1 : 2;
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

    for (int bi = 0; bi < steps_per_epoch; ++bi) {
      Tensor images = batch_images(ds, order, static_cast<size_t>(bi) * bs, bs);
      std::vector<LcAnnotation> ann;
      ann.reserve(bs);
      for (int b = 0; b < bs; ++b) ann.push_back(all_ann[order[static_cast<size_t>(bi) * bs + b]]);

      Tape tape;
      BatchLoss loss;
      if (config.is_rlc()) {
        RlcForward fwd = forward_rlc(tape, model, images, BnMode::Train);
        // RLC staging is off by default; when on, stage 1 drops the
        // classifier-coupled category-specific term.
        const bool drop_rcount = config.rlc_two_stage && stage == 1;
        if (drop_rcount) {
          RlcSplit empty_split;
          empty_split.in_a.assign(config.num_categories, false);
          empty_split.set_b.resize(config.num_categories);
          for (int ci = 0; ci < config.num_categories; ++ci) empty_split.set_b[ci] = ci;
          loss = assemble_rlc(tape, fwd, ann, empty_split, false, &result.warnings);
        } else {
          loss = assemble_rlc(tape, fwd, ann, split, config.rlc_include_s0_mse, &result.warnings);
        }
      } else {
        LcForward fwd = forward_lc(tape, model, images, BnMode::Train);
        loss = assemble_lc(tape, fwd, ann, stage, config.lambda, &result.warnings);
      }

      if (!std::isfinite(loss.breakdown.total))
        throw std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step));

      model.zero_grads();
      tape.backward(loss.total);
      sgd_step(opt);

      log.push_back({step, epoch, config.is_rlc() && !config.rlc_two_stage ? 1 : stage, loss.breakdown});
      ++step;
    }
    save_checkpoint((fs::path(out_dir) / "checkpoints" / ("epoch_" + std::to_string(epoch))).string(), model, &opt,
                    config.hash());
  }

  result.checkpoint_dir = (fs::path(out_dir) / "checkpoint").string();
  save_checkpoint(result.checkpoint_dir, model, &opt, config.hash());
  result.steps = step;
  result.wall_clock_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json steps_json = json::array();
  for (const auto& r : log) {
    json row = breakdown_to_json(r.losses);
    row["step"] = r.step;
    row["epoch"] = r.epoch;
    row["stage"] = r.stage;
    steps_json.push_back(row);
  }
  json log_json = {{"config_hash", config.hash()},
                   {"config", json::parse(config.to_json_string())},
                   {"steps", steps_json},
                   {"warnings",
                    {{"all_zero_peak_maps", result.warnings.all_zero_peak_maps},
                     {"empty_masks", result.warnings.empty_masks}}},
                   {"wall_clock_sec", result.wall_clock_sec}};
  std::ofstream lf(fs::path(out_dir) / "train_log.json", std::ios::binary);
  lf << log_json.dump() << "\n";
  return result;
}

CountTable presence_baseline_table(const Dataset& dataset) {
  CountTable table;
  table.num_images = static_cast<int>(dataset.samples.size());
  table.num_categories = dataset.spec.num_categories;
  table.gt.resize(static_cast<size_t>(table.num_images) * table.num_categories);
  table.pred.resize(table.gt.size());
  for (int i = 0; i < table.num_images; ++i) {
    for (int c = 0; c < table.num_categories; ++c) {
      const int t = dataset.samples[i].gt_counts[c];
      table.gt_at(i, c) = t;
      table.pred_at(i, c) = t > 0 ? 1.0 : 0.0;
    }
  }
  return table;
}

EvalResult evaluate(const std::string& checkpoint_dir, const std::string& data_dir, const std::string& report_path,
                    const EvalOptions& options) {
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_dir);
  ModelState& model = ckpt.state;
  Dataset ds = load_dataset(resolve_dataset_dir(data_dir, "test"));
  if (ds.spec.num_categories != model.config.num_categories || ds.spec.image_size != model.config.image_size)
    throw std::runtime_error("evaluate: dataset does not match checkpoint (categories/image size)");

  const int t = static_cast<int>(ds.samples.size());
  const int c = model.config.num_categories;
  const int map_size = model.config.map_size();
  const bool rlc = model.config.framework == Framework::Rlc;

  EvalResult out;
  out.table.num_images = t;
  out.table.num_categories = c;
  out.table.gt.resize(static_cast<size_t>(t) * c);
  out.table.pred.resize(static_cast<size_t>(t) * c);

  std::vector<Tensor> game_maps;
  std::vector<std::vector<Point>> game_points;
  json dump_manifest = json::array();
  if (options.dump_density) fs::create_directories(options.dump_dir);

  for (int i = 0; i < t; ++i) {
    Tape tape;
    CountPrediction pred;
    Val density;
    Val d_tot;
    if (rlc) {
      RlcForward fwd = forward_rlc(tape, model, ds.samples[i].image, BnMode::Eval, false);
      pred = predict_counts_rlc(tape, fwd, 0);
      density = fwd.d_hat;
      d_tot = fwd.d_tot;
    } else {
      LcForward fwd = forward_lc(tape, model, ds.samples[i].image, BnMode::Eval, false);
      pred = predict_counts_lc(tape, fwd, 0);
      density = fwd.d;
    }

    double gt_total = 0, pred_total = 0;
    for (int ci = 0; ci < c; ++ci) {
      out.table.gt_at(i, ci) = ds.samples[i].gt_counts[ci];
      out.table.pred_at(i, ci) = pred.per_category[ci];
      gt_total += ds.samples[i].gt_counts[ci];
      pred_total += pred.per_category[ci];
    }
    // RLC reports the holistic head; LC sums the per-category predictions.
    out.totals.emplace_back(gt_total, rlc ? pred.total : pred_total);

    if (options.compute_game || options.dump_density) {
      for (int ci = 0; ci < c; ++ci) {
        Tensor dmap = Tensor({map_size, map_size});
        const Tensor& d = tape.value(density);
        const size_t plane = static_cast<size_t>(map_size) * map_size;
        std::copy_n(d.data().data() + static_cast<size_t>(ci) * plane, plane, dmap.data().data());
        if (options.compute_game) {
          std::vector<Point> pts;
          for (const Point& p : ds.samples[i].gt_points[ci])
            pts.push_back({p.row * map_size / ds.spec.image_size, p.col * map_size / ds.spec.image_size});
          game_points.push_back(std::move(pts));
          game_maps.push_back(options.dump_density ? dmap : std::move(dmap));
        }
        if (options.dump_density) {
          float peak = 0.0f;
          for (size_t k = 0; k < dmap.numel(); ++k) peak = std::max(peak, dmap[k]);
          char name[64];
          std::snprintf(name, sizeof(name), "density_img%04d_cat%02d.pgm", i, ci);
          save_pgm(dmap, (fs::path(options.dump_dir) / name).string(), peak);
          dump_manifest.push_back({{"file", name}, {"image", i}, {"category", ci}, {"scale", peak}});
        }
      }
      if (options.dump_density && rlc) {
        Tensor tmap = Tensor({map_size, map_size});
        const Tensor& dt = tape.value(d_tot);
        std::copy_n(dt.data().data(), tmap.numel(), tmap.data().data());
        float peak = 0.0f;
        for (size_t k = 0; k < tmap.numel(); ++k) peak = std::max(peak, tmap[k]);
        char name[64];
        std::snprintf(name, sizeof(name), "density_img%04d_total.pgm", i);
        save_pgm(tmap, (fs::path(options.dump_dir) / name).string(), peak);
        dump_manifest.push_back({{"file", name}, {"image", i}, {"category", "total"}, {"scale", peak}});
      }
    }
  }

  out.report = rmse_family(out.table);
  auto [total_rmse, total_rel] = total_count_metrics(out.totals);
  out.report.total_rmse = total_rmse;
  out.report.total_rel_rmse = total_rel;
  if (options.compute_game) {
    out.report.game.resize(4);
    for (int n = 0; n <= 3; ++n) out.report.game[n] = game_dataset(game_maps, game_points, n);
  }
  out.report.config_hash = ckpt.config_hash;
  out.presence_baseline = rmse_family(presence_baseline_table(ds));

  if (!report_path.empty()) {
    write_report_json(out.report, report_path);
    const fs::path csv = fs::path(report_path).parent_path() /
                         (fs::path(report_path).stem().string() + ".csv");
    write_report_csv(out.report, csv.string());
  }
  if (options.dump_density) {
    std::ofstream mf(fs::path(options.dump_dir) / "dumps.json", std::ios::binary);
    mf << dump_manifest.dump(2) << "\n";
  }
  return out;
}

SweepKind parse_sweep_kind(const std::string& name) {
  if (name == "lambda") return SweepKind::Lambda;
  if (name == "t_tilde") return SweepKind::TTilde;
  if (name == "split") return SweepKind::Split;
  throw std::invalid_argument("unknown sweep \"" + name + "\" (expected lambda|t_tilde|split)");
}

std::vector<AblationArm> ablate(const RunConfig& config, SweepKind sweep, const std::vector<double>& values,
                                const std::string& out_dir) {
  if (values.empty()) throw std::invalid_argument("ablate: no sweep values given");
  config.validate();
  fs::create_directories(out_dir);

  // One dataset shared by every arm.
  const std::string data_dir = (fs::path(out_dir) / "data").string();
  if (!fs::exists(fs::path(data_dir) / "train" / "manifest.json")) {
    RunConfig data_config = config;
    if (sweep == SweepKind::TTilde) {
      // images must support the largest swept range
      int max_t = config.t_tilde;
      for (double v : values) max_t = std::max(max_t, static_cast<int>(v));
      data_config.max_count = std::max(config.max_count, max_t + 2);
    }
    synth_datasets(data_config, data_dir);
  }
  const std::string ds_hash = dataset_hash((fs::path(data_dir) / "train").string());

  std::vector<AblationArm> arms;
  for (double v : values) {
    RunConfig arm_config = config;
    std::string tag;
    switch (sweep) {
      case SweepKind::Lambda:
        arm_config.lambda = static_cast<float>(v);
        tag = "lambda_" + std::to_string(v);
        break;
      case SweepKind::TTilde:
        arm_config.t_tilde = static_cast<int>(v);
        arm_config.max_count = std::max(config.max_count, static_cast<int>(v) + 2);
        tag = "t_tilde_" + std::to_string(static_cast<int>(v));
        break;
      case SweepKind::Split:
        arm_config.framework = "rlc";
        arm_config.annotated_count = static_cast<int>(v);
        tag = "split_" + std::to_string(static_cast<int>(v));
        break;
    }
    const std::string run_dir = (fs::path(out_dir) / tag).string();
    TrainResult tr = train(arm_config, data_dir, run_dir);
    EvalResult ev = evaluate(tr.checkpoint_dir, data_dir, (fs::path(run_dir) / "report.json").string());

    AblationArm arm;
    arm.value = v;
    arm.run_dir = run_dir;
    arm.report = ev.report;
    arm.banded_mrmse_5_8 = banded_mrmse(ev.table, 5, 8);
    arm.banded_mrmse_nz_5_8 = arm.banded_mrmse_5_8;
    arm.dataset_hash = ds_hash;
    arms.push_back(std::move(arm));
  }

  std::ofstream csv(fs::path(out_dir) / "sweep.csv", std::ios::binary);
  csv << "value,dataset_hash,mrmse,mrmse_nz,mrel_rmse,mrel_rmse_nz,total_rmse,banded_mrmse_5_8\n";
  for (const auto& a : arms) {
    char line[256];
    std::snprintf(line, sizeof(line), "%g,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", a.value, a.dataset_hash.c_str(),
                  a.report.mrmse, a.report.mrmse_nz, a.report.mrel_rmse, a.report.mrel_rmse_nz,
                  a.report.total_rmse.value_or(0.0), a.banded_mrmse_5_8);
    csv << line;
  }
  return arms;
}

void score_proposals_cli(const std::string& manifest_path, const std::string& out_csv) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + manifest_path);
  json j;
  try {
    j = json::parse(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("proposal manifest is malformed: " + std::string(e.what()));
  }
  const fs::path base = fs::path(manifest_path).parent_path();
  const int h = j.at("height").get<int>();
  const int w = j.at("width").get<int>();

  ProposalSet set;
  set.peak_response = load_f32_blob((base / j.at("peak_response").get<std::string>()).string(), {h, w});
  set.background = load_f32_blob((base / j.at("background").get<std::string>()).string(), {h, w});
  set.density = load_f32_blob((base / j.at("density").get<std::string>()).string(), {h, w});
  set.alpha = j.at("alpha").get<float>();
  set.beta = j.at("beta").get<float>();
  set.gamma = j.at("gamma").get<float>();
  std::vector<std::string> names;
  for (const auto& p : j.at("proposals")) {
    names.push_back(p.get<std::string>());
    set.proposals.push_back(load_pgm_mask((base / names.back()).string()));
  }

  auto ranked = score_proposals(set);
  std::ofstream out(out_csv, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + out_csv + " for writing");
  out << "rank,proposal_index,proposal,score,density_penalty\n";
  for (size_t r = 0; r < ranked.size(); ++r) {
    const auto& [idx, score] = ranked[r];
    char line[512];
    std::snprintf(line, sizeof(line), "%zu,%d,%s,%.6f,%.6f\n", r, idx, names[idx].c_str(), score,
                  density_penalty(set.density, set.proposals[idx]));
    out << line;
  }
}

}  // namespace counting
