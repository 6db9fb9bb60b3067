#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ssdn/gradsuite.hpp"
#include "ssdn/train.hpp"

namespace fs = std::filesystem;
using namespace ssdn;

namespace {

void cmd_synth_data(const std::string& out_dir, int count, int size, int n_shapes,
                    uint64_t seed) {
  require(count > 0, "synth-data: empty dataset (count must be positive)");
  require(size >= 32 && size % 16 == 0, "synth-data: size must be a multiple of 16, >= 32");
  fs::create_directories(out_dir);

  DatasetManifest manifest;
  manifest.root = out_dir;
  const int n_train = count * 8 / 10;
  const int n_val = count / 10;
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "scene%04d", i);
    ScenePair s = synth_scene(size, size, n_shapes, Rng::mix(seed, id));
    s.id = id;
    ManifestEntry e;
    e.id = id;
    e.rgb_path = std::string(id) + ".ppm";
    e.depth_path = std::string(id) + ".pgm";
    e.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    write_ppm8(out_dir + "/" + e.rgb_path, s.rgb);
    write_pgm16(out_dir + "/" + e.depth_path, s.depth_hr);
    manifest.entries.push_back(std::move(e));
  }
  save_manifest(out_dir + "/manifest.tsv", manifest);
  std::cout << "wrote " << count << " scenes (" << n_train << " train, " << n_val << " val, "
            << count - n_train - n_val << " test) under " << out_dir << "\n";
}

void cmd_train_dpc(const RunConfig& cfg, const std::string& manifest_path,
                   const std::string& out, int count, int epochs, double lr) {
  DatasetManifest manifest = load_manifest(manifest_path);
  auto scenes = load_split(manifest, "train", cfg.scale);
  require(!scenes.empty(), "train-dpc: empty train split");
  auto dataset = make_dpc_dataset(scenes, cfg.scr_patch, cfg.defect, count, cfg.seed);
  DpcTrainReport report;
  DpcModel model = train_dpc(dataset, epochs, lr, cfg.seed, &report, cfg.scr_patch);
  save_dpc(out, model);
  std::cout << "dpc: best holdout accuracy " << report.best_holdout_accuracy << " (epoch "
            << report.best_epoch << "), final " << report.final_holdout_accuracy << ", saved "
            << out << "\n";
}

void cmd_train(const RunConfig& cfg) {
  require(!cfg.data_manifest.empty(), "train: paths.manifest is required");
  DatasetManifest manifest = load_manifest(cfg.data_manifest);
  auto train_scenes = load_split(manifest, "train", cfg.scale);
  auto val_scenes = load_split(manifest, "val", cfg.scale);

  DpcModel dpc;
  const DpcModel* dpc_ptr = nullptr;
  if (cfg.loss.alpha3 > 0 && cfg.scr_period > 0) {
    require(!cfg.dpc_ckpt.empty(),
            "train: refinement is enabled (loss.alpha3 > 0); paths.dpc is required");
    dpc = load_dpc(cfg.dpc_ckpt);
    dpc_ptr = &dpc;
  }

  Model<float> model = build_model<float>(cfg.model, cfg.seed);
  std::ofstream csv(cfg.loss_csv);
  require(csv.good(), "train: cannot open " + cfg.loss_csv);
  TrainResult result = train_loop(cfg, model, train_scenes, val_scenes, &csv, dpc_ptr);
  std::cout << "train: " << result.steps << " steps, first-epoch loss "
            << result.first_epoch_loss << ", last-epoch loss " << result.last_epoch_loss;
  if (result.best_epoch >= 0)
    std::cout << ", best val RMSE " << result.best_val_rmse << " at epoch " << result.best_epoch;
  std::cout << ", checkpoint " << cfg.ckpt_out << "\n";
}

void cmd_eval(const RunConfig& cfg, const std::string& ckpt, const std::string& manifest_path,
              const std::string& split, const std::string& csv_out) {
  DatasetManifest manifest = load_manifest(manifest_path);
  auto scenes = load_split(manifest, split, cfg.scale);
  require(!scenes.empty(), "eval: empty split '" + split + "'");

  Model<float> model = build_model<float>(cfg.model, cfg.seed);
  int ckpt_scale = load_model_params(ckpt, model);
  require(ckpt_scale == 0 || ckpt_scale == cfg.scale,
          "eval: scale mismatch with checkpoint (trained for x" + std::to_string(ckpt_scale) +
              ")");

  EvalResult res = evaluate(model, scenes);
  std::ofstream csv;
  if (!csv_out.empty()) {
    csv.open(csv_out);
    require(csv.good(), "eval: cannot open " + csv_out);
    csv << "id,model_rmse,bicubic_rmse\n";
  }
  std::printf("%-12s %12s %12s\n", "id", "model", "bicubic");
  for (const auto& row : res.rows) {
    std::printf("%-12s %12.6f %12.6f\n", row.id.c_str(), row.model_rmse, row.bicubic_rmse);
    if (csv.is_open())
      csv << row.id << "," << row.model_rmse << "," << row.bicubic_rmse << "\n";
  }
  std::printf("%-12s %12.6f %12.6f  (ratio %.4f)\n", "mean", res.mean_model, res.mean_bicubic,
              res.mean_model / res.mean_bicubic);
  if (csv.is_open())
    csv << "mean," << res.mean_model << "," << res.mean_bicubic << "\n";
}

void cmd_super_resolve(const RunConfig& cfg, const std::string& ckpt, const std::string& rgb_path,
                       const std::string& lr_path, const std::string& out_path) {
  RgbImage rgb = read_ppm8(rgb_path);
  DepthMap lr = read_pgm16(lr_path);
  require(rgb.height() % lr.height() == 0 && rgb.width() % lr.width() == 0,
          "super-resolve: RGB dims must be an integer multiple of the LR depth dims");
  int scale = rgb.height() / lr.height();
  require(scale == rgb.width() / lr.width(), "super-resolve: inconsistent x/y scale");

  Model<float> model = build_model<float>(cfg.model, cfg.seed);
  int ckpt_scale = load_model_params(ckpt, model);
  require(ckpt_scale == 0 || ckpt_scale == scale,
          "super-resolve: scale mismatch with checkpoint (trained for x" +
              std::to_string(ckpt_scale) + ", inputs imply x" + std::to_string(scale) + ")");

  DepthMap out;
  out.values = super_resolve(lr.values, rgb.values, model, scale);
  for (auto& v : out.values.data) v = std::clamp(v, 0.0f, 1.0f);
  out.scale = lr.scale;
  out.unit = lr.unit;
  write_pgm16(out_path, out);
  std::cout << "wrote " << out_path << " (" << out.height() << "x" << out.width() << ")\n";
}

void cmd_viz(const std::string& pred_path, const std::string& gt_path,
             const std::string& out_path) {
  DepthMap pred = read_pgm16(pred_path);
  DepthMap gt = read_pgm16(gt_path);
  require(pred.height() == gt.height() && pred.width() == gt.width(), "viz: dim mismatch");

  float max_diff = 0;
  Array<float> err({gt.height(), gt.width(), 1});
  for (int64_t i = 0; i < err.size(); ++i) {
    err.data[i] = std::abs(pred.values.data[i] - gt.values.data[i]);
    max_diff = std::max(max_diff, err.data[i]);
  }
  DepthMap out;
  if (max_diff > 0)
    for (auto& v : err.data) v /= max_diff;  // stretch |error| onto [0,65535]
  out.values = std::move(err);
  out.scale = static_cast<double>(max_diff) * gt.scale;  // count*scale = error in gt units
  out.unit = gt.unit;
  write_pgm16(out_path, out);
  std::cout << "wrote " << out_path << " (max |error| " << max_diff * 65535.0 * gt.scale << " "
            << gt.unit << ")\n";
}

int cmd_gradcheck(uint64_t seed) {
  auto results = run_gradcheck_suites(seed);
  bool all_pass = true;
  std::printf("%-32s %14s %10s  %s\n", "op", "max rel err", "tol", "verdict");
  for (const auto& r : results) {
    std::printf("%-32s %14.3e %10.0e  %s\n", r.name.c_str(), r.max_rel_err, r.tol,
                r.pass ? "pass" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spherical-space guided depth super-resolution toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic RGB-D dataset");
  std::string out_dir = "data";
  int count = 200, size = 96, n_shapes = 5;
  uint64_t synth_seed = 1;
  synth->add_option("--out", out_dir, "output directory");
  synth->add_option("--count", count, "number of scenes");
  synth->add_option("--size", size, "scene height/width");
  synth->add_option("--shapes", n_shapes, "shapes per scene");
  synth->add_option("--seed", synth_seed, "rng seed");

  auto* tdpc = app.add_subcommand("train-dpc", "train the defect patches classifier");
  std::string dpc_manifest, dpc_out = "dpc.ckpt";
  int dpc_count = 800, dpc_epochs = 60;
  double dpc_lr = 3e-3;
  tdpc->add_option("--manifest", dpc_manifest, "dataset manifest")->required();
  tdpc->add_option("--out", dpc_out, "output checkpoint");
  tdpc->add_option("--count", dpc_count, "patches to synthesize");
  tdpc->add_option("--epochs", dpc_epochs, "training epochs");
  tdpc->add_option("--lr", dpc_lr, "learning rate");

  auto* train = app.add_subcommand("train", "train the super-resolution model");

  auto* eval = app.add_subcommand("eval", "evaluate RMSE against the bicubic baseline");
  std::string eval_ckpt, eval_manifest, eval_split = "test", eval_csv;
  eval->add_option("--ckpt", eval_ckpt, "model checkpoint")->required();
  eval->add_option("--manifest", eval_manifest, "dataset manifest")->required();
  eval->add_option("--split", eval_split, "split to evaluate");
  eval->add_option("--out", eval_csv, "per-image CSV output");

  auto* sr = app.add_subcommand("super-resolve", "upsample one LR depth map");
  std::string sr_ckpt, sr_rgb, sr_lr, sr_out = "pred.pgm";
  sr->add_option("--ckpt", sr_ckpt, "model checkpoint")->required();
  sr->add_option("--rgb", sr_rgb, "HR guide image (PPM)")->required();
  sr->add_option("--depth-lr", sr_lr, "LR depth map (PGM)")->required();
  sr->add_option("--out", sr_out, "output depth map (PGM)");

  auto* viz = app.add_subcommand("viz", "write a |pred - gt| error map");
  std::string viz_pred, viz_gt, viz_out = "error.pgm";
  viz->add_option("--pred", viz_pred, "prediction (PGM)")->required();
  viz->add_option("--gt", viz_gt, "ground truth (PGM)")->required();
  viz->add_option("--out", viz_out, "output error map (PGM)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference verification of all ops");
  uint64_t gc_seed = 2024;
  gc->add_option("--seed", gc_seed, "rng seed");

  for (CLI::App* sub : {synth, tdpc, train, eval, sr, viz, gc}) {
    sub->add_option("--config", config_path, "run-config file (key = value lines)");
    sub->add_option("--set", overrides, "config override, e.g. --set train.scale=8");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = parse_config_file(config_path, overrides);
    if (synth->parsed()) {
      cmd_synth_data(out_dir, count, size, n_shapes, synth_seed);
    } else if (tdpc->parsed()) {
      cmd_train_dpc(cfg, dpc_manifest, dpc_out, dpc_count, dpc_epochs, dpc_lr);
    } else if (train->parsed()) {
      cmd_train(cfg);
    } else if (eval->parsed()) {
      cmd_eval(cfg, eval_ckpt, eval_manifest, eval_split, eval_csv);
    } else if (sr->parsed()) {
      cmd_super_resolve(cfg, sr_ckpt, sr_rgb, sr_lr, sr_out);
    } else if (viz->parsed()) {
      cmd_viz(viz_pred, viz_gt, viz_out);
    } else if (gc->parsed()) {
      return cmd_gradcheck(gc_seed);
    }
  } catch (const numeric_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
