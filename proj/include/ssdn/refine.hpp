#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ssdn/data_io.hpp"
#include "ssdn/losses.hpp"
#include "ssdn/optimizer.hpp"

namespace ssdn {

enum class DefectKind : int {
  perfect = 0,
  noisy = 1,
  blurry = 2,
  texture_over_transferred = 3,
};

constexpr int kDefectClasses = 4;
const char* defect_name(DefectKind k);

struct DefectParams {
  double noise_sigma = 0.05;  // fraction of the depth dynamic range
  int blur_kernel = 7;
  double blur_sigma = 2.0;
  double texture_beta = 0.3;

  void validate() const {
    require(noise_sigma >= 0, "DefectParams: noise_sigma must be >= 0");
    require(blur_kernel >= 3 && blur_kernel % 2 == 1, "DefectParams: blur_kernel must be odd >= 3");
    require(blur_sigma > 0, "DefectParams: blur_sigma must be positive");
    require(texture_beta >= 0 && texture_beta <= 1, "DefectParams: texture_beta in [0,1]");
  }
};

struct PatchTriplet {
  Array<float> anchor;                  // m x m x 1, cropped from the prediction
  Array<float> positive;                // same-location ground-truth crop
  std::vector<Array<float>> negatives;  // defect-transformed crops, other locations
  DefectKind label = DefectKind::perfect;
  int anchor_y = 0, anchor_x = 0;
  std::vector<std::pair<int, int>> negative_locations;
};

// Gaussian blur with reflect padding, separable.
Array<float> gaussian_blur(const Array<float>& img, int kernel, double sigma);

// Applies one synthetic defect; rgb is required exactly for the
// texture-over-transfer kind. Works on any H x W x 1 map in [0,1].
Array<float> synthesize_defect(const Array<float>& patch, DefectKind kind,
                               const Array<float>* rgb_patch, const DefectParams& params,
                               uint64_t seed);

struct DpcDataset {
  std::vector<Array<float>> patches;  // m x m x 1
  std::vector<int> labels;            // DefectKind encoding
};

// Balanced four-class patch set from the scenes' ground-truth depth; patch
// locations are re-drawn (bounded retries) until the crop has enough dynamic
// range for blur to be observable.
DpcDataset make_dpc_dataset(const std::vector<ScenePair>& scenes, int m,
                            const DefectParams& params, int count, uint64_t seed);

// Small convolutional classifier: four conv+pool stages, global average
// pooling, linear head to four logits.
struct DpcModel {
  int patch = 32;
  ParamStore<float> params;
};

DpcModel build_dpc(int m, uint64_t seed);
void save_dpc(const std::string& path, const DpcModel& model);
DpcModel load_dpc(const std::string& path);

DefectKind classify_patch(const DpcModel& model, const Array<float>& patch);

struct DpcTrainReport {
  double best_holdout_accuracy = 0;
  double final_holdout_accuracy = 0;
  int best_epoch = -1;
};

double dpc_accuracy(const DpcModel& model, const DpcDataset& set);
DpcModel train_dpc(const DpcDataset& dataset, int epochs, double lr, uint64_t seed,
                   DpcTrainReport* report = nullptr, int m = 32);

// Anchor/positive/negative sampling around DPC-classified defects. Perfect
// anchors are re-drawn up to five times, then skipped.
std::vector<PatchTriplet> sample_triplets(const Array<float>& pred_hr, const DepthMap& gt,
                                          const RgbImage& rgb, const DpcModel& model, int m,
                                          int n_negatives, int k_anchors,
                                          const DefectParams& params, uint64_t seed);

// One contrastive fine-tuning update. Gradients flow only into the depth
// encoder; every other module is untouched.
template <typename T>
LossReport scr_step(Model<T>& model, const std::vector<PatchTriplet>& triplets, Adam<T>& opt,
                    const LossWeights& weights) {
  LossReport report;
  if (triplets.empty()) return report;

  Tape<T> tape;
  Lease<T> l = lease_params(tape, model, true);
  std::vector<Array<T>> anchors, positives;
  std::vector<std::vector<Array<T>>> negatives;
  for (const auto& t : triplets) {
    anchors.push_back(cast_array<T>(t.anchor));
    positives.push_back(cast_array<T>(t.positive));
    std::vector<Array<T>> negs;
    for (const auto& n : t.negatives) negs.push_back(cast_array<T>(n));
    negatives.push_back(std::move(negs));
  }
  ScrResult<T> res = scr_loss(anchors, positives, negatives, l, model.cfg);
  report.scr = static_cast<double>(res.loss.scalar());
  report.total = weights.alpha3 * report.scr;

  GradMap<T> node_grads = tape.backward(res.loss);
  NamedGrads<T> grads = grads_by_name(l, node_grads);
  for (auto it = grads.begin(); it != grads.end();)
    it = it->first.rfind("enc_d/", 0) == 0 ? std::next(it) : grads.erase(it);
  opt.step(model.params, grads);
  return report;
}

}  // namespace ssdn
