#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ssdn/train.hpp"

using namespace ssdn;

namespace {

std::string cli() {
  const char* path = std::getenv("SSDN_CLI");
  REQUIRE(path != nullptr);
  return path;
}

int run(const std::string& args) {
  std::string cmd = cli() + " " + args + " > /tmp/ssdn_cli_out.txt 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string last_output() {
  std::ifstream is("/tmp/ssdn_cli_out.txt");
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

bool files_identical(const std::string& a, const std::string& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  return sa.str() == sb.str();
}

std::vector<ScenePair> tiny_scenes(int n, uint64_t seed) {
  std::vector<ScenePair> scenes;
  for (int i = 0; i < n; ++i) {
    ScenePair s = synth_scene(48, 48, 4, seed + i);
    s.id = "s" + std::to_string(i);
    s.depth_lr = derive_lr(s.depth_hr, 4);
    s.scale_factor = 4;
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace

TEST_CASE("run config parsing") {
  std::ofstream os("/tmp/ssdn_cfg.txt");
  os << "# comment line\n"
     << "model.channels = 16\n"
     << "model.blocks = 2   # trailing comment\n"
     << "sphere.variant = verbatim\n"
     << "loss.alpha2 = 0.5e-3\n"
     << "train.scale = 8\n";
  os.close();

  RunConfig cfg = parse_config_file("/tmp/ssdn_cfg.txt", {"train.scale=4", "model.heads=2"});
  CHECK(cfg.model.channels == 16);
  CHECK(cfg.model.blocks == 2);
  CHECK(cfg.model.sphere.variant == SphereVariant::verbatim);
  CHECK(cfg.loss.alpha2 == doctest::Approx(0.5e-3));
  CHECK(cfg.scale == 4);  // override wins
  CHECK(cfg.model.heads == 2);

  CHECK_THROWS_WITH_AS(parse_overrides({"nonsense.key=1"}), doctest::Contains("unknown key"),
                       std::runtime_error);
  CHECK_THROWS(parse_overrides({"train.scale=5"}));       // invalid value
  CHECK_THROWS(parse_overrides({"model.channels=7"}));    // odd channels
  CHECK_THROWS(parse_overrides({"loss.alpha1=abc"}));     // not a number
  CHECK_THROWS(parse_overrides({"defect.blur_kernel=4"}));
}

TEST_CASE("synth-data command: split sizes, determinism, validation") {
  REQUIRE(run("synth-data --out /tmp/ssdn_ds_a --count 20 --size 48 --seed 5") == 0);
  DatasetManifest m = load_manifest("/tmp/ssdn_ds_a/manifest.tsv");
  CHECK(m.entries.size() == 20);
  CHECK(m.split("train").size() == 16);
  CHECK(m.split("val").size() == 2);
  CHECK(m.split("test").size() == 2);

  REQUIRE(run("synth-data --out /tmp/ssdn_ds_b --count 20 --size 48 --seed 5") == 0);
  for (const auto& e : m.entries) {
    CHECK(files_identical("/tmp/ssdn_ds_a/" + e.rgb_path, "/tmp/ssdn_ds_b/" + e.rgb_path));
    CHECK(files_identical("/tmp/ssdn_ds_a/" + e.depth_path, "/tmp/ssdn_ds_b/" + e.depth_path));
  }

  CHECK(run("synth-data --out /tmp/ssdn_ds_c --count 0") == 1);
  CHECK(last_output().find("empty dataset") != std::string::npos);
}

TEST_CASE("one-epoch train smoke run writes a loadable checkpoint") {
  REQUIRE(run("synth-data --out /tmp/ssdn_ds_t --count 10 --size 48 --seed 9") == 0);
  int rc = run(
      "train --set paths.manifest=/tmp/ssdn_ds_t/manifest.tsv"
      " --set paths.ckpt=/tmp/ssdn_ds_t/model.ckpt --set paths.loss_csv=/tmp/ssdn_ds_t/loss.csv"
      " --set model.blocks=1 --set model.channels=8 --set model.heads=2"
      " --set train.epochs=1 --set train.crop=32 --set train.batch=4 --set loss.alpha3=0");
  REQUIRE(rc == 0);

  ModelConfig cfg;
  cfg.blocks = 1;
  cfg.channels = 8;
  cfg.heads = 2;
  Model<float> model = build_model<float>(cfg, 1);
  CHECK(load_model_params("/tmp/ssdn_ds_t/model.ckpt", model) == 4);  // scale metadata

  std::ifstream csv("/tmp/ssdn_ds_t/loss.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == LossReport::csv_header());
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  CHECK(rows >= 2);
}

TEST_CASE("training loss decreases by epoch 5 on the synthetic set") {
  auto scenes = tiny_scenes(16, 700);
  RunConfig cfg = parse_overrides({
      "model.blocks=1", "model.channels=8", "model.heads=2", "train.crop=32",
      "train.batch=4", "train.epochs=5", "opt.lr=1e-3", "loss.alpha3=0",
  });
  cfg.ckpt_out.clear();
  Model<float> model = build_model<float>(cfg.model, cfg.seed);
  TrainResult r = train_loop(cfg, model, scenes, {}, nullptr, nullptr);
  MESSAGE("epoch1 ", r.first_epoch_loss, " -> epoch5 ", r.last_epoch_loss);
  CHECK(r.last_epoch_loss < r.first_epoch_loss);
}

TEST_CASE("eval: zero-initialized residual model equals the bicubic baseline") {
  auto scenes = tiny_scenes(4, 900);
  ModelConfig cfg;
  cfg.blocks = 1;
  cfg.channels = 8;
  cfg.heads = 2;
  Model<float> model = build_model<float>(cfg, 3);
  EvalResult res = evaluate(model, scenes);
  for (const auto& row : res.rows) CHECK(row.model_rmse == row.bicubic_rmse);

  CHECK_THROWS(evaluate(model, {}));  // empty split
}

TEST_CASE("eval command rejects a scale mismatch with the checkpoint") {
  REQUIRE(run("synth-data --out /tmp/ssdn_ds_e --count 10 --size 64 --seed 12") == 0);
  REQUIRE(run("train --set paths.manifest=/tmp/ssdn_ds_e/manifest.tsv"
              " --set paths.ckpt=/tmp/ssdn_ds_e/model.ckpt"
              " --set paths.loss_csv=/tmp/ssdn_ds_e/loss.csv"
              " --set model.blocks=1 --set model.channels=8 --set model.heads=2"
              " --set train.epochs=1 --set train.crop=32 --set train.batch=4"
              " --set train.scale=4 --set loss.alpha3=0") == 0);
  CHECK(run("eval --ckpt /tmp/ssdn_ds_e/model.ckpt --manifest /tmp/ssdn_ds_e/manifest.tsv"
            " --split test --set model.blocks=1 --set model.channels=8 --set model.heads=2"
            " --set train.scale=4") == 0);
  CHECK(run("eval --ckpt /tmp/ssdn_ds_e/model.ckpt --manifest /tmp/ssdn_ds_e/manifest.tsv"
            " --split test --set model.blocks=1 --set model.channels=8 --set model.heads=2"
            " --set train.scale=8") == 1);
  CHECK(last_output().find("scale mismatch") != std::string::npos);
}

TEST_CASE("super-resolve and viz commands") {
  // one scene on disk
  ScenePair s = synth_scene(64, 64, 4, 1234);
  s.depth_lr = derive_lr(s.depth_hr, 4);
  write_ppm8("/tmp/ssdn_sr_rgb.ppm", s.rgb);
  write_pgm16("/tmp/ssdn_sr_gt.pgm", s.depth_hr);
  write_pgm16("/tmp/ssdn_sr_lr.pgm", s.depth_lr);

  ModelConfig cfg;
  cfg.blocks = 1;
  cfg.channels = 8;
  cfg.heads = 2;
  Model<float> model = build_model<float>(cfg, 77);
  save_model("/tmp/ssdn_sr_model.ckpt", model, 4);

  REQUIRE(run("super-resolve --ckpt /tmp/ssdn_sr_model.ckpt --rgb /tmp/ssdn_sr_rgb.ppm"
              " --depth-lr /tmp/ssdn_sr_lr.pgm --out /tmp/ssdn_sr_pred.pgm"
              " --set model.blocks=1 --set model.channels=8 --set model.heads=2") == 0);
  DepthMap pred = read_pgm16("/tmp/ssdn_sr_pred.pgm");
  CHECK(pred.height() == 64);  // scale x LR dims
  CHECK(pred.width() == 64);

  SUBCASE("viz of pred vs gt marks the max-error location") {
    REQUIRE(run("viz --pred /tmp/ssdn_sr_pred.pgm --gt /tmp/ssdn_sr_gt.pgm"
                " --out /tmp/ssdn_sr_err.pgm") == 0);
    DepthMap err = read_pgm16("/tmp/ssdn_sr_err.pgm");
    // brute-force argmax of |pred - gt| must coincide with the map's argmax
    int64_t want = 0, got = 0;
    float best = -1, beste = -1;
    for (int64_t i = 0; i < err.values.size(); ++i) {
      float d = std::abs(pred.values.data[i] - s.depth_hr.values.data[i]);
      if (d > best) {
        best = d;
        want = i;
      }
      if (err.values.data[i] > beste) {
        beste = err.values.data[i];
        got = i;
      }
    }
    CHECK(got == want);
    CHECK(err.values.data[got] == 1.0f);  // stretched to the full 16-bit range
  }

  SUBCASE("viz with pred == gt gives an all-zero map") {
    REQUIRE(run("viz --pred /tmp/ssdn_sr_gt.pgm --gt /tmp/ssdn_sr_gt.pgm"
                " --out /tmp/ssdn_sr_err0.pgm") == 0);
    DepthMap err = read_pgm16("/tmp/ssdn_sr_err0.pgm");
    for (float v : err.values.data) CHECK(v == 0.0f);
  }

  SUBCASE("inconsistent scale is rejected") {
    CHECK(run("super-resolve --ckpt /tmp/ssdn_sr_model.ckpt --rgb /tmp/ssdn_sr_rgb.ppm"
              " --depth-lr /tmp/ssdn_sr_gt.pgm --out /tmp/ssdn_x.pgm"
              " --set model.blocks=1 --set model.channels=8 --set model.heads=2") == 1);
  }
}

TEST_CASE("ablation toggles are plain config switches") {
  // shared encoders (Exp I analogue)
  RunConfig shared = parse_overrides({"model.shared_encoders=true", "model.blocks=1",
                                      "model.channels=8", "model.heads=2", "train.crop=32",
                                      "train.batch=2", "train.epochs=1", "loss.alpha3=0"});
  shared.ckpt_out.clear();
  auto scenes = tiny_scenes(4, 800);
  Model<float> m = build_model<float>(shared.model, 1);
  CHECK_NOTHROW(train_loop(shared, m, scenes, {}, nullptr, nullptr));

  // drop the decomposition loss (Exp II), l2 distance (Exp III),
  // drop the RGB loss (Exp IV), drop refinement (Exp V)
  CHECK(parse_overrides({"loss.alpha2=0"}).loss.alpha2 == 0.0);
  CHECK(parse_overrides({"loss.dec_distance=l2"}).dec_distance == DecDistance::l2);
  CHECK(parse_overrides({"loss.alpha1=0"}).loss.alpha1 == 0.0);
  CHECK(parse_overrides({"loss.alpha3=0"}).loss.alpha3 == 0.0);

  RunConfig l2run = parse_overrides({"loss.dec_distance=l2", "model.blocks=1",
                                     "model.channels=8", "model.heads=2", "train.crop=32",
                                     "train.batch=2", "train.epochs=1", "loss.alpha3=0"});
  l2run.ckpt_out.clear();
  Model<float> m2 = build_model<float>(l2run.model, 2);
  CHECK_NOTHROW(train_loop(l2run, m2, scenes, {}, nullptr, nullptr));
}

TEST_CASE("refinement schedule fires on multiples of the period") {
  auto scenes = tiny_scenes(6, 850);
  RunConfig cfg = parse_overrides({"model.blocks=1", "model.channels=8", "model.heads=2",
                                   "train.crop=32", "train.batch=2", "train.epochs=4",
                                   "scr.period=2", "scr.patch=16", "scr.negatives=2",
                                   "scr.anchors=2", "opt.lr=1e-3"});
  cfg.ckpt_out.clear();
  // a DPC that always reports "noisy" guarantees non-empty triplets
  DpcModel dpc = build_dpc(16, 0);
  for (auto& [name, arr] : dpc.params.items())
    for (auto& v : arr.data) v = 0.0f;
  dpc.params.at("dpc/head/b").data[static_cast<int>(DefectKind::noisy)] = 1.0f;

  Model<float> m = build_model<float>(cfg.model, 3);
  TrainResult r = train_loop(cfg, m, scenes, {}, nullptr, &dpc);
  CHECK(r.scr_events == 2);  // epochs 2 and 4
}

TEST_CASE("train aborts with exit code 2 on a numeric failure") {
  REQUIRE(run("synth-data --out /tmp/ssdn_ds_n --count 10 --size 48 --seed 21") == 0);
  // an absurd learning rate reliably overflows float within one epoch
  int rc = run(
      "train --set paths.manifest=/tmp/ssdn_ds_n/manifest.tsv"
      " --set paths.ckpt=/tmp/ssdn_ds_n/model.ckpt --set paths.loss_csv=/tmp/ssdn_ds_n/loss.csv"
      " --set model.blocks=1 --set model.channels=8 --set model.heads=2"
      " --set train.epochs=3 --set train.crop=32 --set train.batch=4"
      " --set opt.lr=1e8 --set loss.alpha3=0");
  CHECK(rc == 2);
}

TEST_CASE("missing DPC checkpoint with refinement enabled is a validation error") {
  REQUIRE(run("synth-data --out /tmp/ssdn_ds_m --count 10 --size 48 --seed 23") == 0);
  int rc = run(
      "train --set paths.manifest=/tmp/ssdn_ds_m/manifest.tsv"
      " --set paths.ckpt=/tmp/ssdn_ds_m/model.ckpt --set paths.loss_csv=/tmp/ssdn_ds_m/loss.csv"
      " --set model.blocks=1 --set model.channels=8 --set model.heads=2"
      " --set train.epochs=1 --set train.crop=32 --set train.batch=4");
  CHECK(rc == 1);
  CHECK(last_output().find("paths.dpc") != std::string::npos);
}
