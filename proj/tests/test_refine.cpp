#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ssdn/refine.hpp"

using namespace ssdn;

namespace {

Array<float> random_patch(int m, uint64_t seed) {
  Rng rng(seed);
  return cast_array<float>(Array<double>::random_uniform({m, m, 1}, rng, 0, 1));
}

// DPC whose convolutions are zero and whose head bias selects one class
DpcModel rigged_dpc(int m, DefectKind always) {
  DpcModel model = build_dpc(m, 0);
  for (auto& [name, arr] : model.params.items())
    for (auto& v : arr.data) v = 0.0f;
  model.params.at("dpc/head/b").data[static_cast<int>(always)] = 1.0f;
  return model;
}

std::vector<ScenePair> toy_scenes(int count, int h, int w, uint64_t seed) {
  std::vector<ScenePair> scenes;
  for (int i = 0; i < count; ++i) scenes.push_back(synth_scene(h, w, 4, seed + i));
  return scenes;
}

ModelConfig tiny_model_config() {
  ModelConfig cfg;
  cfg.blocks = 1;
  cfg.channels = 4;
  cfg.heads = 2;
  return cfg;
}

}  // namespace

TEST_CASE("synthesize_defect identities") {
  DefectParams params;
  Array<float> patch = random_patch(16, 3);

  auto perfect = synthesize_defect(patch, DefectKind::perfect, nullptr, params, 1);
  CHECK(perfect.data == patch.data);

  DefectParams no_noise = params;
  no_noise.noise_sigma = 0.0;
  auto still = synthesize_defect(patch, DefectKind::noisy, nullptr, no_noise, 1);
  CHECK(still.data == patch.data);

  Array<float> flat = Array<float>::full({16, 16, 1}, 0.6f);
  auto blurred = synthesize_defect(flat, DefectKind::blurry, nullptr, params, 1);
  for (float v : blurred.data) CHECK(v == doctest::Approx(0.6f).epsilon(1e-6));

  CHECK_THROWS(synthesize_defect(patch, DefectKind::texture_over_transferred, nullptr, params, 1));
}

TEST_CASE("synthesize_defect preserves shape and range for all kinds") {
  DefectParams params;
  params.noise_sigma = 0.2;
  params.texture_beta = 0.7;
  Rng rng(5);
  Array<float> rgb = cast_array<float>(Array<double>::random_uniform({16, 16, 3}, rng, 0, 1));
  for (int kind = 0; kind < kDefectClasses; ++kind) {
    Array<float> patch = random_patch(16, 10 + kind);
    auto out = synthesize_defect(patch, static_cast<DefectKind>(kind), &rgb, params, 7);
    CHECK(out.shape == patch.shape);
    for (float v : out.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("texture defect blends toward luma") {
  DefectParams params;
  params.texture_beta = 1.0;
  Array<float> patch = Array<float>::full({4, 4, 1}, 0.2f);
  Array<float> rgb({4, 4, 3});
  for (int64_t p = 0; p < 16; ++p) {
    rgb.data[3 * p] = 1.0f;  // pure red: luma 0.299
    rgb.data[3 * p + 1] = 0.0f;
    rgb.data[3 * p + 2] = 0.0f;
  }
  auto out = synthesize_defect(patch, DefectKind::texture_over_transferred, &rgb, params, 1);
  for (float v : out.data) CHECK(v == doctest::Approx(0.299f).epsilon(1e-6));
}

TEST_CASE("make_dpc_dataset: balance, determinism, perfect identity") {
  auto scenes = toy_scenes(3, 48, 48, 100);
  DefectParams params;
  auto set = make_dpc_dataset(scenes, 16, params, 40, 7);
  REQUIRE(set.patches.size() == 40);

  int per_class[kDefectClasses] = {0, 0, 0, 0};
  for (int label : set.labels) ++per_class[label];
  for (int c = 0; c < kDefectClasses; ++c) CHECK(per_class[c] == 10);

  auto again = make_dpc_dataset(scenes, 16, params, 40, 7);
  for (size_t i = 0; i < set.patches.size(); ++i)
    CHECK(again.patches[i].data == set.patches[i].data);

  // perfect patches are untouched crops: every value exists in some scene's
  // piecewise-constant depth map
  std::vector<float> depth_values;
  for (const auto& s : scenes)
    for (float v : s.depth_hr.values.data)
      if (std::find(depth_values.begin(), depth_values.end(), v) == depth_values.end())
        depth_values.push_back(v);
  for (size_t i = 0; i < set.patches.size(); ++i) {
    if (set.labels[i] != static_cast<int>(DefectKind::perfect)) continue;
    for (float v : set.patches[i].data)
      CHECK(std::find(depth_values.begin(), depth_values.end(), v) != depth_values.end());
  }

  CHECK_THROWS(make_dpc_dataset(scenes, 16, params, 41, 7));   // not a multiple of 4
  CHECK_THROWS(make_dpc_dataset(scenes, 64, params, 40, 7));   // patch larger than scene
}

TEST_CASE("classify_patch: ties break to the lowest class index") {
  DpcModel zero = build_dpc(16, 0);
  for (auto& [name, arr] : zero.params.items())
    for (auto& v : arr.data) v = 0.0f;
  // all logits equal -> class 0
  CHECK(classify_patch(zero, random_patch(16, 3)) == DefectKind::perfect);

  auto rigged = rigged_dpc(16, DefectKind::blurry);
  CHECK(classify_patch(rigged, random_patch(16, 4)) == DefectKind::blurry);
  CHECK_THROWS(classify_patch(rigged, random_patch(32, 5)));  // wrong size
}

TEST_CASE("dpc training learns the easy regime quickly") {
  auto scenes = toy_scenes(4, 64, 64, 300);
  DefectParams params;
  params.noise_sigma = 0.1;
  params.texture_beta = 0.5;
  auto set = make_dpc_dataset(scenes, 16, params, 240, 11);
  DpcTrainReport report;
  DpcModel model = train_dpc(set, 20, 2e-3, 13, &report, 16);
  MESSAGE("dpc holdout accuracy after 20 epochs: ", report.best_holdout_accuracy);
  CHECK(report.best_holdout_accuracy >= 0.55);  // far above the 0.25 chance level

  // degenerate single-class set scores 1.0 trivially
  DpcDataset single;
  for (int i = 0; i < 8; ++i) {
    single.patches.push_back(set.patches[i * 4]);  // class 0 patches
    single.labels.push_back(0);
  }
  DpcModel lazy = rigged_dpc(16, DefectKind::perfect);
  CHECK(dpc_accuracy(lazy, single) == 1.0);
}

TEST_CASE("sample_triplets construction") {
  auto scene = synth_scene(64, 64, 5, 500);
  Rng rng(17);
  Array<float> pred = scene.depth_hr.values;
  for (auto& v : pred.data) v = std::clamp(v + 0.08f * static_cast<float>(rng.normal()), 0.0f, 1.0f);
  DefectParams params;

  SUBCASE("defect-classified anchors build full triplets") {
    auto model = rigged_dpc(16, DefectKind::noisy);
    auto triplets = sample_triplets(pred, scene.depth_hr, scene.rgb, model, 16, 3, 5, params, 23);
    REQUIRE(triplets.size() == 5);
    for (const auto& t : triplets) {
      CHECK(t.label == DefectKind::noisy);
      CHECK(t.negatives.size() == 3);
      CHECK(t.anchor.shape == Shape{16, 16, 1});
      CHECK(t.positive.shape == Shape{16, 16, 1});
      for (auto [ny, nx] : t.negative_locations)
        CHECK((ny != t.anchor_y || nx != t.anchor_x));
    }
  }

  SUBCASE("all-perfect classification yields no triplets") {
    auto model = rigged_dpc(16, DefectKind::perfect);
    auto triplets = sample_triplets(pred, scene.depth_hr, scene.rgb, model, 16, 3, 5, params, 23);
    CHECK(triplets.empty());
  }

  SUBCASE("deterministic for a fixed seed") {
    auto model = rigged_dpc(16, DefectKind::blurry);
    auto a = sample_triplets(pred, scene.depth_hr, scene.rgb, model, 16, 2, 3, params, 29);
    auto b = sample_triplets(pred, scene.depth_hr, scene.rgb, model, 16, 2, 3, params, 29);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].anchor.data == b[i].anchor.data);
      CHECK(a[i].negative_locations == b[i].negative_locations);
    }
  }

  SUBCASE("image too small") {
    auto model = rigged_dpc(16, DefectKind::noisy);
    Array<float> tiny = Array<float>::full({8, 8, 1}, 0.5f);
    DepthMap tiny_gt;
    tiny_gt.values = tiny;
    CHECK_THROWS(sample_triplets(tiny, tiny_gt, scene.rgb, model, 16, 2, 1, params, 1));
  }
}

TEST_CASE("scr_step: perfect anchors leave parameters bitwise unchanged") {
  auto cfg = tiny_model_config();
  auto model = build_model<double>(cfg, 600);
  auto before = model.params.items();

  PatchTriplet t;
  t.anchor = random_patch(8, 31);
  t.positive = t.anchor;
  t.negatives = {random_patch(8, 37), random_patch(8, 41)};
  Adam<double> opt(1e-4);
  LossWeights w;
  LossReport report = scr_step(model, {t}, opt, w);
  CHECK(report.scr == 0.0);
  for (size_t i = 0; i < before.size(); ++i)
    CHECK(model.params.items()[i].second.data == before[i].second.data);
}

TEST_CASE("scr_step: empty triplets are a no-op with scr = 0") {
  auto cfg = tiny_model_config();
  auto model = build_model<double>(cfg, 610);
  auto before = model.params.items();
  Adam<double> opt(1e-4);
  LossWeights w;
  LossReport report = scr_step(model, {}, opt, w);
  CHECK(report.scr == 0.0);
  CHECK(report.total == 0.0);
  for (size_t i = 0; i < before.size(); ++i)
    CHECK(model.params.items()[i].second.data == before[i].second.data);
}

TEST_CASE("scr_step: defect anchors give positive loss and touch only enc_d") {
  auto cfg = tiny_model_config();
  auto model = build_model<double>(cfg, 620);
  auto before = model.params.items();

  auto scene = synth_scene(48, 48, 4, 700);
  DefectParams params;
  params.noise_sigma = 0.15;
  Rng rng(43);
  PatchTriplet t;
  Array<float> gt_crop({16, 16, 1});
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) gt_crop.at(y, x, 0) = scene.depth_hr.values.at(y + 8, x + 8, 0);
  t.positive = gt_crop;
  t.anchor = synthesize_defect(gt_crop, DefectKind::noisy, nullptr, params, 51);
  auto defected = synthesize_defect(scene.depth_hr.values, DefectKind::noisy, nullptr, params, 52);
  for (int n = 0; n < 2; ++n) {
    Array<float> neg({16, 16, 1});
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) neg.at(y, x, 0) = defected.at(y + n * 20, x + 2, 0);
    t.negatives.push_back(neg);
  }

  Adam<double> opt(1e-4);
  LossWeights w;
  LossReport r1 = scr_step(model, {t}, opt, w);
  CHECK(r1.scr > 0.0);

  bool enc_d_changed = false;
  for (size_t i = 0; i < before.size(); ++i) {
    const auto& [name, arr] = model.params.items()[i];
    if (name.rfind("enc_d/", 0) == 0) {
      if (arr.data != before[i].second.data) enc_d_changed = true;
    } else {
      CHECK(arr.data == before[i].second.data);  // frozen modules
    }
  }
  CHECK(enc_d_changed);

  // one small-lr step must not increase the loss on the same triplets
  Tape<double> tape;
  auto l = lease_params(tape, model, false);
  auto res = scr_loss<double>({cast_array<double>(t.anchor)}, {cast_array<double>(t.positive)},
                              {{cast_array<double>(t.negatives[0]),
                                cast_array<double>(t.negatives[1])}},
                              l, cfg);
  CHECK(res.loss.scalar() <= r1.scr);
}
