#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ssdn/config.hpp"
#include "ssdn/data_io.hpp"
#include "ssdn/refine.hpp"

namespace ssdn {

struct TrainResult {
  double best_val_rmse = 0;
  int best_epoch = -1;
  double first_epoch_loss = 0;
  double last_epoch_loss = 0;
  int steps = 0;
  int scr_events = 0;
};

struct EvalRow {
  std::string id;
  double model_rmse = 0;
  double bicubic_rmse = 0;
};

struct EvalResult {
  std::vector<EvalRow> rows;
  double mean_model = 0;
  double mean_bicubic = 0;
};

std::vector<ScenePair> load_split(const DatasetManifest& manifest, const std::string& split,
                                  int scale);

// Adam training of the weighted loss with the periodic contrastive
// refinement schedule; writes one CSV row per step and keeps the
// best-validation checkpoint in `model`.
TrainResult train_loop(const RunConfig& cfg, Model<float>& model,
                       const std::vector<ScenePair>& train_scenes,
                       const std::vector<ScenePair>& val_scenes, std::ostream* loss_csv,
                       const DpcModel* dpc);

EvalResult evaluate(const Model<float>& model, const std::vector<ScenePair>& scenes);

DepthMap predict_depth(const Model<float>& model, const ScenePair& scene);

}  // namespace ssdn
