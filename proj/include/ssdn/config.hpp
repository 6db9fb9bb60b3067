#pragma once

#include <string>
#include <vector>

#include "ssdn/losses.hpp"
#include "ssdn/network.hpp"
#include "ssdn/refine.hpp"

namespace ssdn {

// Full run configuration: "key = value" lines, "#" comments, unknown keys
// rejected. Flag overrides reuse the same key=value syntax.
struct RunConfig {
  ModelConfig model;
  LossWeights loss;
  DecMode dec_mode = DecMode::consistent;
  DecDistance dec_distance = DecDistance::spherical;
  PixelMode pixel_mode = PixelMode::sum;

  DefectParams defect;
  int scr_patch = 32;      // m
  int scr_negatives = 8;   // N
  int scr_anchors = 0;     // K; 0 means "use the batch size"
  int scr_period = 10;     // refinement every this many epochs
  double scr_lr = 1e-4;

  double lr = 5e-3;
  double beta1 = 0.9, beta2 = 0.999;
  bool cosine_decay = false;

  int batch = 8;
  int epochs = 100;
  int crop = 128;
  int crops_per_scene = 1;   // gradient steps per scene per epoch
  int crop_candidates = 4;   // positions tried per crop, highest-residual wins
  int scale = 4;
  uint64_t seed = 1;

  std::string data_manifest;
  std::string ckpt_out = "model.ckpt";
  std::string dpc_ckpt;
  std::string loss_csv = "loss.csv";

  void validate() const;
  void set(const std::string& key, const std::string& value);
};

RunConfig parse_config_file(const std::string& path,
                            const std::vector<std::string>& overrides = {});
RunConfig parse_overrides(const std::vector<std::string>& overrides);

}  // namespace ssdn
