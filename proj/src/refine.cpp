#include "ssdn/refine.hpp"

#include <algorithm>
#include <cmath>

namespace ssdn {

const char* defect_name(DefectKind k) {
  switch (k) {
    case DefectKind::perfect: return "perfect";
    case DefectKind::noisy: return "noisy";
    case DefectKind::blurry: return "blurry";
    case DefectKind::texture_over_transferred: return "texture_over_transferred";
  }
  return "?";
}

Array<float> gaussian_blur(const Array<float>& img, int kernel, double sigma) {
  require(img.rank() == 3, "gaussian_blur: want rank-3");
  require(kernel >= 3 && kernel % 2 == 1, "gaussian_blur: kernel must be odd >= 3");
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2), half = kernel / 2;
  std::vector<double> weights(kernel);
  double total = 0;
  for (int i = 0; i < kernel; ++i) {
    double d = i - half;
    weights[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += weights[i];
  }
  for (double& wt : weights) wt /= total;

  Array<float> tmp({h, w, c}), out({h, w, c});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (int i = 0; i < kernel; ++i)
          acc += weights[i] * img.at(y, detail::reflect_index(x + i - half, w), ch);
        tmp.at(y, x, ch) = static_cast<float>(acc);
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (int i = 0; i < kernel; ++i)
          acc += weights[i] * tmp.at(detail::reflect_index(y + i - half, h), x, ch);
        out.at(y, x, ch) = static_cast<float>(acc);
      }
  return out;
}

Array<float> synthesize_defect(const Array<float>& patch, DefectKind kind,
                               const Array<float>* rgb_patch, const DefectParams& params,
                               uint64_t seed) {
  params.validate();
  require(patch.rank() == 3 && patch.dim(2) == 1, "synthesize_defect: depth must be H x W x 1");
  switch (kind) {
    case DefectKind::perfect:
      return patch;
    case DefectKind::noisy: {
      Rng rng(Rng::mix(seed, "defect-noise"));
      Array<float> out = patch;
      for (auto& v : out.data)
        v = static_cast<float>(std::clamp(v + params.noise_sigma * rng.normal(), 0.0, 1.0));
      return out;
    }
    case DefectKind::blurry:
      return gaussian_blur(patch, params.blur_kernel, params.blur_sigma);
    case DefectKind::texture_over_transferred: {
      require(rgb_patch != nullptr, "synthesize_defect: texture kind requires an rgb patch");
      require(rgb_patch->dim(0) == patch.dim(0) && rgb_patch->dim(1) == patch.dim(1) &&
                  rgb_patch->dim(2) == 3,
              "synthesize_defect: rgb patch dims mismatch");
      Array<float> out = patch;
      const double beta = params.texture_beta;
      for (int64_t p = 0; p < patch.size(); ++p) {
        double luma = 0.299 * rgb_patch->data[3 * p] + 0.587 * rgb_patch->data[3 * p + 1] +
                      0.114 * rgb_patch->data[3 * p + 2];
        out.data[p] = static_cast<float>(
            std::clamp((1.0 - beta) * patch.data[p] + beta * luma, 0.0, 1.0));
      }
      return out;
    }
  }
  fail("synthesize_defect: unknown kind");
}

namespace {

Array<float> crop(const Array<float>& img, int y0, int x0, int m) {
  const int c = img.dim(2);
  Array<float> out({m, m, c});
  for (int y = 0; y < m; ++y)
    for (int x = 0; x < m; ++x)
      for (int ch = 0; ch < c; ++ch) out.at(y, x, ch) = img.at(y0 + y, x0 + x, ch);
  return out;
}

float dynamic_range(const Array<float>& patch) {
  auto [lo, hi] = std::minmax_element(patch.data.begin(), patch.data.end());
  return *hi - *lo;
}

}  // namespace

DpcDataset make_dpc_dataset(const std::vector<ScenePair>& scenes, int m,
                            const DefectParams& params, int count, uint64_t seed) {
  params.validate();
  require(!scenes.empty(), "make_dpc_dataset: no scenes");
  require(count > 0 && count % kDefectClasses == 0,
          "make_dpc_dataset: count must be a positive multiple of 4");
  for (const auto& s : scenes)
    require(s.depth_hr.height() >= m && s.depth_hr.width() >= m,
            "make_dpc_dataset: scene smaller than the patch size");

  Rng rng(Rng::mix(seed, "dpc-dataset"));
  DpcDataset set;
  set.patches.reserve(count);
  set.labels.reserve(count);
  for (int i = 0; i < count; ++i) {
    auto kind = static_cast<DefectKind>(i % kDefectClasses);
    const ScenePair& scene = scenes[rng.uniform_int(0, static_cast<int>(scenes.size()) - 1)];
    int y0 = 0, x0 = 0;
    Array<float> patch;
    for (int attempt = 0; attempt < 20; ++attempt) {
      y0 = rng.uniform_int(0, scene.depth_hr.height() - m);
      x0 = rng.uniform_int(0, scene.depth_hr.width() - m);
      patch = crop(scene.depth_hr.values, y0, x0, m);
      if (dynamic_range(patch) >= 0.1f) break;  // blur needs visible structure
    }
    Array<float> rgb = crop(scene.rgb.values, y0, x0, m);
    set.patches.push_back(synthesize_defect(patch, kind, &rgb, params, rng.bits()));
    set.labels.push_back(static_cast<int>(kind));
  }
  return set;
}

namespace {

Array<float> flip_patch(const Array<float>& p, bool flip_y, bool flip_x) {
  if (!flip_y && !flip_x) return p;
  const int h = p.dim(0), w = p.dim(1), c = p.dim(2);
  Array<float> out({h, w, c});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        out.at(y, x, ch) = p.at(flip_y ? h - 1 - y : y, flip_x ? w - 1 - x : x, ch);
  return out;
}

constexpr int kDpcStages = 4;
constexpr int kDpcChannels[kDpcStages + 1] = {1, 16, 32, 64, 64};

Tensor<float> dpc_logits(Tape<float>& tape, const DpcModel& model, const Array<float>& patch,
                         const std::unordered_map<std::string, Tensor<float>>* leased = nullptr) {
  auto param = [&](const std::string& name) {
    if (leased) return leased->at(name);
    return tape.constant(model.params.at(name));
  };
  // center the [0,1] input so first-layer features are zero-mean
  Tensor<float> x = scale(add(tape.constant(patch), -0.5f), 2.0f);
  for (int s = 0; s < kDpcStages; ++s) {
    auto w = param("dpc/s" + std::to_string(s) + "/w");
    auto b = param("dpc/s" + std::to_string(s) + "/b");
    x = avg_pool2(gelu(conv2d(x, w, ConvKind::k3x3, &b)));
  }
  auto pooled = reshape(global_avg_pool(x), {1, kDpcChannels[kDpcStages]});
  auto logits = matmul(pooled, param("dpc/head/w"));
  return add(logits, reshape(param("dpc/head/b"), {1, kDefectClasses}));
}

}  // namespace

DpcModel build_dpc(int m, uint64_t seed) {
  require(m >= 16 && m % 16 == 0, "build_dpc: patch size must be a positive multiple of 16");
  DpcModel model;
  model.patch = m;
  Rng rng(Rng::mix(seed, "dpc-init"));
  for (int s = 0; s < kDpcStages; ++s) {
    int ci = kDpcChannels[s], co = kDpcChannels[s + 1];
    model.params.create("dpc/s" + std::to_string(s) + "/w",
                        netdetail::conv_init<float>({3, 3, ci, co}, 9 * ci, rng));
    model.params.create("dpc/s" + std::to_string(s) + "/b", Array<float>::zeros({co}));
  }
  model.params.create("dpc/head/w", netdetail::conv_init<float>(
                                        {kDpcChannels[kDpcStages], kDefectClasses},
                                        kDpcChannels[kDpcStages], rng));
  model.params.create("dpc/head/b", Array<float>::zeros({kDefectClasses}));
  return model;
}

void save_dpc(const std::string& path, const DpcModel& model) {
  NamedTensors nt;
  nt.emplace_back("dpc/patch", Array<float>({1}, std::vector<float>{static_cast<float>(model.patch)}));
  for (const auto& [name, arr] : model.params.items()) nt.emplace_back(name, arr);
  save_checkpoint(path, nt);
}

DpcModel load_dpc(const std::string& path) {
  NamedTensors nt = load_checkpoint(path);
  require(!nt.empty() && nt[0].first == "dpc/patch", "load_dpc: not a dpc checkpoint");
  DpcModel model = build_dpc(static_cast<int>(nt[0].second.data[0]), 0);
  for (size_t i = 1; i < nt.size(); ++i) {
    Array<float>& dst = model.params.at(nt[i].first);
    require(dst.shape == nt[i].second.shape, "load_dpc: shape mismatch for " + nt[i].first);
    dst = nt[i].second;
  }
  return model;
}

DefectKind classify_patch(const DpcModel& model, const Array<float>& patch) {
  require(patch.rank() == 3 && patch.dim(0) == model.patch && patch.dim(1) == model.patch &&
              patch.dim(2) == 1,
          "classify_patch: wrong patch size");
  Tape<float> tape;
  auto logits = dpc_logits(tape, model, patch);
  const Array<float>& v = logits.value();
  int best = 0;
  for (int i = 1; i < kDefectClasses; ++i)
    if (v.data[i] > v.data[best]) best = i;  // ties keep the lowest index
  return static_cast<DefectKind>(best);
}

double dpc_accuracy(const DpcModel& model, const DpcDataset& set) {
  require(!set.patches.empty(), "dpc_accuracy: empty set");
  int hits = 0;
  for (size_t i = 0; i < set.patches.size(); ++i)
    if (static_cast<int>(classify_patch(model, set.patches[i])) == set.labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(set.patches.size());
}

DpcModel train_dpc(const DpcDataset& dataset, int epochs, double lr, uint64_t seed,
                   DpcTrainReport* report, int m) {
  require(!dataset.patches.empty(), "train_dpc: empty dataset");
  require(dataset.patches.size() == dataset.labels.size(), "train_dpc: label count mismatch");

  Rng rng(Rng::mix(seed, "dpc-train"));
  const int n = static_cast<int>(dataset.patches.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);

  const int holdout = std::max(1, n / 5);
  DpcDataset train, val;
  for (int i = 0; i < n; ++i) {
    DpcDataset& dst = i < n - holdout ? train : val;
    dst.patches.push_back(dataset.patches[order[i]]);
    dst.labels.push_back(dataset.labels[order[i]]);
  }

  DpcModel model = build_dpc(m, rng.bits());
  Adam<float> opt(lr);
  DpcModel best = model;
  DpcTrainReport rep;

  const int batch = 16;
  const int nt = static_cast<int>(train.patches.size());
  std::vector<int> idx(nt);
  for (int i = 0; i < nt; ++i) idx[i] = i;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    opt.set_lr(lr * std::pow(0.5, epoch / 20));  // step decay tames late oscillation
    for (int i = nt - 1; i > 0; --i) std::swap(idx[i], idx[rng.uniform_int(0, i)]);
    for (int start = 0; start < nt; start += batch) {
      int bsz = std::min(batch, nt - start);
      Tape<float> tape;
      std::unordered_map<std::string, Tensor<float>> leased;
      for (const auto& [name, arr] : model.params.items())
        leased.emplace(name, tape.leaf(arr, true));
      Tensor<float> loss;
      for (int j = 0; j < bsz; ++j) {
        int k = idx[start + j];
        // flip augmentation; all four defect labels are flip-invariant
        Array<float> patch =
            flip_patch(train.patches[k], rng.uniform() < 0.5, rng.uniform() < 0.5);
        auto logits = dpc_logits(tape, model, patch, &leased);
        auto probs = softmax_rows(logits);
        auto hit = slice_lastdim(probs, train.labels[k], train.labels[k] + 1);
        auto nll = neg(log(sum_all(hit)));
        loss = j == 0 ? nll : add(loss, nll);
      }
      loss = scale(loss, 1.0f / static_cast<float>(bsz));
      auto node_grads = tape.backward(loss);
      NamedGrads<float> grads;
      for (const auto& [name, t] : leased) grads.emplace(name, std::move(node_grads.at(t.id())));
      opt.step(model.params, grads);
    }
    double acc = dpc_accuracy(model, val);
    if (acc > rep.best_holdout_accuracy) {
      rep.best_holdout_accuracy = acc;
      rep.best_epoch = epoch;
      best = model;
    }
    rep.final_holdout_accuracy = acc;
  }
  if (report) *report = rep;
  return best;
}

std::vector<PatchTriplet> sample_triplets(const Array<float>& pred_hr, const DepthMap& gt,
                                          const RgbImage& rgb, const DpcModel& model, int m,
                                          int n_negatives, int k_anchors,
                                          const DefectParams& params, uint64_t seed) {
  require(k_anchors >= 1 && n_negatives >= 1, "sample_triplets: need K >= 1 and N >= 1");
  require(pred_hr.dim(0) >= m && pred_hr.dim(1) >= m, "sample_triplets: image too small");
  require(pred_hr.dim(0) == gt.height() && pred_hr.dim(1) == gt.width(),
          "sample_triplets: prediction and ground truth dims differ");

  Rng rng(Rng::mix(seed, "scr-triplets"));
  std::vector<PatchTriplet> out;
  for (int k = 0; k < k_anchors; ++k) {
    int y0 = 0, x0 = 0;
    DefectKind kind = DefectKind::perfect;
    Array<float> anchor;
    for (int attempt = 0; attempt < 5; ++attempt) {
      y0 = rng.uniform_int(0, pred_hr.dim(0) - m);
      x0 = rng.uniform_int(0, pred_hr.dim(1) - m);
      anchor = crop(pred_hr, y0, x0, m);
      kind = classify_patch(model, anchor);
      if (kind != DefectKind::perfect) break;
    }
    if (kind == DefectKind::perfect) continue;  // clean region, nothing to refine

    Array<float> defected =
        synthesize_defect(gt.values, kind, &rgb.values, params, rng.bits());
    PatchTriplet t;
    t.anchor = std::move(anchor);
    t.positive = crop(gt.values, y0, x0, m);
    t.label = kind;
    t.anchor_y = y0;
    t.anchor_x = x0;
    for (int n = 0; n < n_negatives; ++n) {
      int ny = y0, nx = x0;
      while (ny == y0 && nx == x0) {
        ny = rng.uniform_int(0, pred_hr.dim(0) - m);
        nx = rng.uniform_int(0, pred_hr.dim(1) - m);
      }
      t.negatives.push_back(crop(defected, ny, nx, m));
      t.negative_locations.emplace_back(ny, nx);
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace ssdn
