// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Everything runs from scratch (data synthesis included) with
// fixed seeds.

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <vector>

#include "ssdn/gradsuite.hpp"
#include "ssdn/train.hpp"

using namespace ssdn;

namespace {

int g_failures = 0;

void report(int criterion, const char* what, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", criterion, what,
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[256];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

// ---- criteria 1 and 2: round trip and on-sphere invariant ------------------

void sphere_round_trip() {
  auto t0 = std::chrono::steady_clock::now();
  double worst_rt = 0, worst_norm = 0;
  for (double r : {0.5, 1.0, 2.0}) {
    SphereConfig cfg;
    cfg.radius = r;
    Rng rng(Rng::mix(11, static_cast<uint64_t>(r * 100)));
    for (int i = 0; i < 10000; ++i) {
      int d = rng.uniform_int(2, 16);
      Array<double> v({1, 1, d});
      for (auto& x : v.data) x = rng.normal();
      double n = sphdetail::pixel_norm_cast(v.data.data(), d);
      double target = rng.uniform(0.0, 0.99 * M_PI * r);
      if (n > 0)
        for (auto& x : v.data) x *= target / n;
      Array<double> y = exp_map_array(v, cfg);
      worst_norm = std::max(
          worst_norm, std::abs(sphdetail::pixel_norm_cast(y.data.data(), d + 1) - r) / r);
      worst_rt = std::max(worst_rt, max_abs_diff(log_map_array(y, cfg), v));
    }
  }
  double secs = seconds_since(t0);
  report(1, "sphere round trip |log(exp(v)) - v| <= 1e-6",
         worst_rt <= 1e-6 && secs < 5.0,
         fmt("max %.3e over 3x10000 vectors, r in {0.5,1,2}, %.2fs", worst_rt, secs));
  report(2, "on-sphere invariant |norm - r|/r <= 1e-6", worst_norm <= 1e-6,
         fmt("max relative deviation %.3e", worst_norm));
}

// ---- criterion 3: worked three-pixel example -------------------------------

void worked_example() {
  auto l2 = [](std::vector<double> a, std::vector<double> b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  };
  double l2_12 = l2({0.4, 0.5, 0.6}, {4, 5, 6});
  double l2_13 = l2({0.4, 0.5, 0.6}, {0.6, 0.5, 0.4});

  Tape<float> tp;
  auto f1 = tp.constant(Array<float>({1, 1, 3}, {0.4f, 0.5f, 0.6f}));
  auto f2 = tp.constant(Array<float>({1, 1, 3}, {4.0f, 5.0f, 6.0f}));
  auto f3 = tp.constant(Array<float>({1, 1, 3}, {0.6f, 0.5f, 0.4f}));
  double c12 = static_cast<double>(cosine_distance_raw(f1, f2).scalar());
  double c13 = static_cast<double>(cosine_distance_raw(f1, f3).scalar());

  bool pass = std::abs(l2_12 - 7.90) <= 0.01 && std::abs(l2_13 - 0.28) <= 0.01 &&
              c12 <= 1e-6 && std::abs(c13 - 0.0519) <= 1e-3;
  report(3, "worked example: l2 7.90/0.28, cosine <=1e-6 and 0.0519", pass,
         fmt("l2 %.4f/%.4f, cosine %.2e/%.5f (printed 0.02 is a documented discrepancy)",
             l2_12, l2_13, c12, c13));
}

// ---- criterion 4: gradient suite --------------------------------------------

void gradient_suite() {
  auto t0 = std::chrono::steady_clock::now();
  auto results = run_gradcheck_suites(2024);
  bool all = true;
  double worst = 0;
  for (const auto& r : results) {
    all = all && r.pass;
    worst = std::max(worst, r.max_rel_err);
    if (!r.pass) std::printf("        gradient suite FAIL: %s (%.3e)\n", r.name.c_str(), r.max_rel_err);
  }
  double secs = seconds_since(t0);
  report(4, "gradient checks for every differentiable op", all && secs < 120.0,
         fmt("%zu op families, worst rel err %.3e, %.1fs", results.size(), worst, secs));
}

// ---- criterion 5: decomposition optimum -------------------------------------

void decomposition_optimum() {
  SphereConfig sc;
  const int hw = 4, d = 8;

  {  // consistent mode reaches per-pixel alignment/orthogonality
    ParamStore<double> store;
    Rng rng(73);
    for (const char* name : {"da", "ds", "ra", "rs"})
      store.create(name, Array<double>::random_uniform({hw, hw, d}, rng, -0.6, 0.6));
    Adam<double> opt(0.05);
    for (int step = 0; step < 500; ++step) {
      Tape<double> tp;
      std::unordered_map<std::string, Tensor<double>> leaf;
      for (auto& [name, arr] : store.items()) leaf.emplace(name, tp.leaf(arr, true));
      std::vector<std::pair<Tensor<double>, Tensor<double>>> pbd{
          {exp_map(leaf.at("da"), sc), exp_map(leaf.at("ds"), sc)}};
      std::vector<std::pair<Tensor<double>, Tensor<double>>> pbr{
          {exp_map(leaf.at("ra"), sc), exp_map(leaf.at("rs"), sc)}};
      auto terms = decomposition_loss(pbd, pbr, sc, DecMode::consistent);
      auto grads = tp.backward(terms.dec);
      NamedGrads<double> by_name;
      for (auto& [name, t] : leaf) by_name.emplace(name, std::move(grads.at(t.id())));
      opt.step(store, by_name);
    }
    auto cosine = [&](const Array<double>& a, const Array<double>& b, int64_t p) {
      double dot = 0, na = 0, nb = 0;
      for (int c = 0; c < d + 1; ++c) {
        dot += a.data[p * (d + 1) + c] * b.data[p * (d + 1) + c];
        na += a.data[p * (d + 1) + c] * a.data[p * (d + 1) + c];
        nb += b.data[p * (d + 1) + c] * b.data[p * (d + 1) + c];
      }
      return dot / std::sqrt(na * nb);
    };
    auto ad = exp_map_prescaled_array(store.at("da"), sc);
    auto ar = exp_map_prescaled_array(store.at("ra"), sc);
    auto sd = exp_map_prescaled_array(store.at("ds"), sc);
    auto sr = exp_map_prescaled_array(store.at("rs"), sc);
    double min_al = 1, max_sep = 0;
    for (int64_t p = 0; p < hw * hw; ++p) {
      min_al = std::min(min_al, cosine(ad, ar, p));
      max_sep = std::max(max_sep, std::abs(cosine(sd, sr, p)));
    }
    report(5, "consistent-mode optimum within 500 steps", min_al >= 0.99 && max_sep <= 0.05,
           fmt("min aligned cos %.4f, max |separated cos| %.4f", min_al, max_sep));
  }

  {  // verbatim mode runs the separation to an extreme (the sign issue)
    ParamStore<double> store;
    Rng rng(79);
    store.create("ds", Array<double>::random_uniform({hw, hw, d}, rng, -0.6, 0.6));
    store.create("rs", Array<double>::random_uniform({hw, hw, d}, rng, -0.6, 0.6));
    Adam<double> opt(0.05);
    double sepn = 1;
    for (int step = 0; step < 500; ++step) {
      Tape<double> tp;
      std::unordered_map<std::string, Tensor<double>> leaf;
      for (auto& [name, arr] : store.items()) leaf.emplace(name, tp.leaf(arr, true));
      auto al = exp_map(leaf.at("ds"), sc);
      std::vector<std::pair<Tensor<double>, Tensor<double>>> pbd{{al, exp_map(leaf.at("ds"), sc)}};
      std::vector<std::pair<Tensor<double>, Tensor<double>>> pbr{{al, exp_map(leaf.at("rs"), sc)}};
      auto terms = decomposition_loss(pbd, pbr, sc, DecMode::verbatim);
      sepn = terms.sepn.scalar();
      auto grads = tp.backward(terms.dec);
      NamedGrads<double> by_name;
      for (auto& [name, t] : leaf) by_name.emplace(name, std::move(grads.at(t.id())));
      opt.step(store, by_name);
    }
    report(5, "verbatim-mode L_sepn driven to an extreme", sepn <= 0.1 || sepn >= 1.9,
           fmt("L_sepn after 500 steps: %.4g", sepn));
  }
}

// ---- shared synthetic dataset for criteria 6-8 ------------------------------

struct AcceptanceData {
  std::vector<ScenePair> train, val, test;
};

AcceptanceData make_dataset() {
  AcceptanceData data;
  for (int i = 0; i < 200; ++i) {
    ScenePair s = synth_scene(96, 96, 5, Rng::mix(4242, i));
    s.id = "acc" + std::to_string(i);
    s.depth_lr = derive_lr(s.depth_hr, 4);
    s.scale_factor = 4;
    if (i < 160) data.train.push_back(std::move(s));
    else if (i < 180) data.val.push_back(std::move(s));
    else data.test.push_back(std::move(s));
  }
  return data;
}

// ---- criterion 6: DPC accuracy ----------------------------------------------

DpcModel dpc_criterion(const AcceptanceData& data) {
  auto t0 = std::chrono::steady_clock::now();
  DefectParams easy;  // the easy regime: strong noise and texture blend
  easy.noise_sigma = 0.1;
  easy.texture_beta = 0.5;
  std::vector<ScenePair> subset(data.train.begin(), data.train.begin() + 8);
  DpcDataset set = make_dpc_dataset(subset, 32, easy, 800, 11);
  DpcTrainReport rep;
  DpcModel model = train_dpc(set, 50, 3e-3, 13, &rep, 32);
  double secs = seconds_since(t0);
  report(6, "DPC held-out accuracy >= 0.90 in < 5 min",
         rep.best_holdout_accuracy >= 0.90 && secs < 300.0,
         fmt("accuracy %.4f (best epoch %d), %.0fs", rep.best_holdout_accuracy, rep.best_epoch,
             secs));
  return model;
}

// ---- criterion 7: SCR sanity -------------------------------------------------

void scr_sanity(const AcceptanceData& data) {
  ModelConfig cfg;
  cfg.blocks = 1;
  cfg.channels = 4;
  cfg.heads = 2;
  LossWeights w;

  {  // anchors == positives: exact zero, parameters untouched
    auto model = build_model<double>(cfg, 600);
    auto before = model.params.items();
    Rng rng(31);
    PatchTriplet t;
    t.anchor = cast_array<float>(Array<double>::random_uniform({16, 16, 1}, rng, 0, 1));
    t.positive = t.anchor;
    t.negatives = {cast_array<float>(Array<double>::random_uniform({16, 16, 1}, rng, 0, 1)),
                   cast_array<float>(Array<double>::random_uniform({16, 16, 1}, rng, 0, 1))};
    Adam<double> opt(1e-4);
    LossReport r = scr_step(model, {t}, opt, w);
    bool unchanged = true;
    for (size_t i = 0; i < before.size(); ++i)
      unchanged = unchanged && model.params.items()[i].second.data == before[i].second.data;
    report(7, "SCR: perfect anchors give L=0 exactly, parameters unchanged",
           r.scr == 0.0 && unchanged, fmt("loss %.17g, params %s", r.scr,
                                          unchanged ? "bitwise identical" : "CHANGED"));
  }

  {  // defect anchors: one small-lr step does not increase the loss
    auto model = build_model<double>(cfg, 610);
    const ScenePair& scene = data.train[0];
    DefectParams params;
    params.noise_sigma = 0.15;
    PatchTriplet t;
    Array<float> gt_crop({16, 16, 1});
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) gt_crop.at(y, x, 0) = scene.depth_hr.values.at(y + 10, x + 6, 0);
    t.positive = gt_crop;
    t.anchor = synthesize_defect(gt_crop, DefectKind::noisy, nullptr, params, 51);
    Array<float> defected =
        synthesize_defect(scene.depth_hr.values, DefectKind::noisy, nullptr, params, 52);
    for (int n = 0; n < 4; ++n) {
      Array<float> neg({16, 16, 1});
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) neg.at(y, x, 0) = defected.at(y + 3 + n * 12, x + 20, 0);
      t.negatives.push_back(neg);
    }
    Adam<double> opt(1e-4);
    LossReport r1 = scr_step(model, {t}, opt, w);

    Tape<double> tape;
    auto l = lease_params(tape, model, false);
    std::vector<Array<double>> negs;
    for (const auto& n : t.negatives) negs.push_back(cast_array<double>(n));
    double after = scr_loss<double>({cast_array<double>(t.anchor)},
                                    {cast_array<double>(t.positive)}, {negs}, l, cfg)
                       .loss.scalar();
    report(7, "SCR: one step at lr 1e-4 does not increase the loss",
           r1.scr > 0.0 && after <= r1.scr, fmt("before %.6f, after %.6f", r1.scr, after));
  }
}

// ---- criterion 8: end-to-end toy training ------------------------------------

void toy_training(const AcceptanceData& data) {
  auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = parse_overrides({
      "model.blocks=2", "model.channels=16", "model.heads=2",
      "train.crop=48", "train.batch=8", "train.epochs=14",
      "opt.lr=1e-3", "loss.alpha3=0", "train.seed=5",
  });
  cfg.ckpt_out = "/tmp/ssdn_acceptance_model.ckpt";
  Model<float> model = build_model<float>(cfg.model, cfg.seed);
  TrainResult tr = train_loop(cfg, model, data.train, data.val, nullptr, nullptr);

  Model<float> best = build_model<float>(cfg.model, cfg.seed);
  load_model_params(cfg.ckpt_out, best);
  EvalResult res = evaluate(best, data.test);
  double ratio = res.mean_model / res.mean_bicubic;
  double secs = seconds_since(t0);

  // oracle margin 0.64 observed; pinned with 10% slack, never looser than 0.9
  const double kMaxRmseRatio = 0.71;
  report(8, "toy training beats bicubic by the pinned margin",
         ratio <= kMaxRmseRatio && secs < 1800.0,
         fmt("test RMSE %.5f vs bicubic %.5f, ratio %.4f <= %.2f, best epoch %d, %.0fs",
             res.mean_model, res.mean_bicubic, ratio, kMaxRmseRatio, tr.best_epoch, secs));
}

// ---- criterion 9: forward transparency ----------------------------------------

void forward_transparency() {
  ModelConfig cfg;
  cfg.blocks = 2;
  cfg.channels = 8;
  cfg.heads = 2;
  auto model = build_model<double>(cfg, 139);
  Rng rng(149);
  for (const char* name : {"dec_d/head/w", "dec_d/head/b", "dec_r/head/w", "dec_r/head/b"})
    for (auto& v : model.params.at(name).data) v = rng.normal(0, 0.05);

  Array<double> dimg = Array<double>::random_uniform({12, 12, 1}, rng, 0, 1);
  Array<double> rimg = Array<double>::random_uniform({12, 12, 3}, rng, 0, 1);
  auto run = [&](bool bypass) {
    ModelConfig c2 = cfg;
    c2.bypass_sphere = bypass;
    Tape<double> tp;
    auto l = lease_params(tp, model, false);
    auto enc_d = encode(tp.constant(dimg), Modality::depth, l, c2);
    auto enc_r = encode(tp.constant(rimg), Modality::rgb, l, c2);
    auto [depth, rgb] = decode(enc_d.phi, enc_r.phi, l, c2);
    return std::pair{depth.value(), rgb.value()};
  };
  auto [d_on, r_on] = run(false);
  auto [d_off, r_off] = run(true);
  double dev = std::max(max_abs_diff(d_on, d_off), max_abs_diff(r_on, r_off));
  report(9, "decomposition maps are forward-transparent (<= 1e-6)", dev <= 1e-6,
         fmt("max |active - bypassed| = %.3e", dev));
}

// ---- criterion 10: codecs and kernel value -----------------------------------

void codec_bit_exactness() {
  Rng rng(17);
  DepthMap d;
  d.values = Array<float>({9, 7, 1});
  for (auto& v : d.values.data) v = static_cast<float>(rng.uniform_int(0, 65535) / 65535.0);
  d.scale = 0.5;
  d.unit = "mm";
  write_pgm16("/tmp/ssdn_acc_depth.pgm", d);
  DepthMap d2 = read_pgm16("/tmp/ssdn_acc_depth.pgm");

  RgbImage img;
  img.values = Array<float>({5, 6, 3});
  for (auto& v : img.values.data) v = static_cast<float>(rng.uniform_int(0, 255) / 255.0);
  write_ppm8("/tmp/ssdn_acc_rgb.ppm", img);
  RgbImage img2 = read_ppm8("/tmp/ssdn_acc_rgb.ppm");

  bool codecs = d2.values.data == d.values.data && d2.scale == d.scale &&
                img2.values.data == img.values.data;
  bool kernel = cubic_weight(0.5) == 0.5625;
  report(10, "codec round trips bit-identical; W(0.5) = 0.5625", codecs && kernel,
         fmt("pgm %s, ppm %s, W(0.5) = %.4f", codecs ? "ok" : "FAIL",
             img2.values.data == img.values.data ? "ok" : "FAIL", cubic_weight(0.5)));
}

}  // namespace

int main() {
  std::printf("acceptance suite\n================\n");
  sphere_round_trip();
  worked_example();
  gradient_suite();
  decomposition_optimum();

  AcceptanceData data = make_dataset();
  dpc_criterion(data);
  scr_sanity(data);
  toy_training(data);

  forward_transparency();
  codec_bit_exactness();

  std::printf("================\n%s (%d failure%s)\n", g_failures == 0 ? "ALL PASS" : "FAILED",
              g_failures, g_failures == 1 ? "" : "s");
  return g_failures == 0 ? 0 : 1;
}
