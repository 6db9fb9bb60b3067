#include "ssdn/train.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace ssdn {

std::vector<ScenePair> load_split(const DatasetManifest& manifest, const std::string& split,
                                  int scale) {
  std::vector<ScenePair> scenes;
  for (const auto& entry : manifest.split(split)) scenes.push_back(load_scene(manifest, entry, scale));
  return scenes;
}

DepthMap predict_depth(const Model<float>& model, const ScenePair& scene) {
  DepthMap out;
  out.values = super_resolve(
      Array<float>(scene.depth_lr.values), scene.rgb.values, model, scene.scale_factor);
  for (auto& v : out.values.data) v = std::clamp(v, 0.0f, 1.0f);
  out.scale = scene.depth_hr.scale;
  out.unit = scene.depth_hr.unit;
  return out;
}

EvalResult evaluate(const Model<float>& model, const std::vector<ScenePair>& scenes) {
  require(!scenes.empty(), "evaluate: empty scene list");
  EvalResult res;
  res.rows.resize(scenes.size());
  // images are independent and the model state is read-only
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (size_t i = 0; i < scenes.size(); ++i) {
    const ScenePair& s = scenes[i];
    EvalRow row;
    row.id = s.id;
    row.model_rmse = rmse(predict_depth(model, s), s.depth_hr);
    DepthMap bicubic;
    bicubic.values = bicubic_resize(s.depth_lr.values, s.depth_hr.height(), s.depth_hr.width());
    for (auto& v : bicubic.values.data) v = std::clamp(v, 0.0f, 1.0f);
    bicubic.scale = s.depth_hr.scale;
    bicubic.unit = s.depth_hr.unit;
    row.bicubic_rmse = rmse(bicubic, s.depth_hr);
    res.rows[i] = std::move(row);
  }
  for (const EvalRow& row : res.rows) {
    res.mean_model += row.model_rmse;
    res.mean_bicubic += row.bicubic_rmse;
  }
  res.mean_model /= static_cast<double>(res.rows.size());
  res.mean_bicubic /= static_cast<double>(res.rows.size());
  return res;
}

namespace {

struct CropSample {
  Array<float> depth_hr;  // c x c x 1
  Array<float> rgb;       // c x c x 3
  Array<float> up_lr;     // bicubic-upsampled LR, residual base and encoder input
};

CropSample extract_crop(const ScenePair& scene, int c, int scale, int y0, int x0) {
  CropSample s;
  s.depth_hr = Array<float>({c, c, 1});
  s.rgb = Array<float>({c, c, 3});
  for (int y = 0; y < c; ++y)
    for (int x = 0; x < c; ++x) {
      s.depth_hr.at(y, x, 0) = scene.depth_hr.values.at(y0 + y, x0 + x, 0);
      for (int ch = 0; ch < 3; ++ch) s.rgb.at(y, x, ch) = scene.rgb.values.at(y0 + y, x0 + x, ch);
    }
  Array<float> lr = bicubic_resize(s.depth_hr, c / scale, c / scale);
  for (auto& v : lr.data) v = std::clamp(v, 0.0f, 1.0f);
  s.up_lr = bicubic_resize(lr, c, c);
  return s;
}

// Residual-weighted crop sampling: of a few candidate positions, train on
// the one where the bicubic baseline errs most. Flat crops carry no
// learning signal, so this concentrates the step budget on edges.
CropSample make_crop(const ScenePair& scene, int crop, int scale, int candidates, Rng& rng) {
  const int h = scene.depth_hr.height(), w = scene.depth_hr.width();
  int c = std::min({crop, h, w});
  c -= c % scale;
  require(c >= scale, "train: crop too small for the scale factor");

  CropSample best;
  double best_energy = -1;
  for (int trial = 0; trial < candidates; ++trial) {
    int y0 = h == c ? 0 : rng.uniform_int(0, h - c);
    int x0 = w == c ? 0 : rng.uniform_int(0, w - c);
    CropSample s = extract_crop(scene, c, scale, y0, x0);
    double energy = 0;
    for (int64_t i = 0; i < s.up_lr.size(); ++i) {
      double d = static_cast<double>(s.up_lr.data[i]) - s.depth_hr.data[i];
      energy += d * d;
    }
    if (energy > best_energy) {
      best_energy = energy;
      best = std::move(s);
    }
    if (h == c && w == c) break;
  }
  return best;
}

}  // namespace

TrainResult train_loop(const RunConfig& cfg, Model<float>& model,
                       const std::vector<ScenePair>& train_scenes,
                       const std::vector<ScenePair>& val_scenes, std::ostream* loss_csv,
                       const DpcModel* dpc) {
  require(!train_scenes.empty(), "train: empty training split");
  const bool scr_enabled = cfg.loss.alpha3 > 0 && cfg.scr_period > 0;
  require(!scr_enabled || dpc != nullptr,
          "train: refinement schedule is enabled but no DPC checkpoint was given");

  Adam<float> opt(cfg.lr, cfg.beta1, cfg.beta2);
  Adam<float> scr_opt(cfg.scr_lr, cfg.beta1, cfg.beta2);
  Rng rng(Rng::mix(cfg.seed, "train-loop"));

  if (loss_csv) *loss_csv << LossReport::csv_header() << "\n";

  TrainResult result;
  std::vector<int> order(train_scenes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  const int steps_per_epoch = std::max<int>(
      1, static_cast<int>(train_scenes.size()) * cfg.crops_per_scene / cfg.batch);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double epoch_lr = cfg.lr;
    if (cfg.cosine_decay)
      epoch_lr = cfg.lr * 0.5 * (1.0 + std::cos(M_PI * (epoch - 1) / cfg.epochs));
    opt.set_lr(epoch_lr);
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(0, i)]);

    double epoch_loss = 0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      if (epoch == 1)  // warmup: ramp over the first epoch
        opt.set_lr(epoch_lr * (step + 1) / steps_per_epoch);
      Tape<float> tape;
      Lease<float> lease = lease_params(tape, model, true);

      Tensor<float> pd, pr, dec_align, dec_sepn, dec;
      for (int b = 0; b < cfg.batch; ++b) {
        const ScenePair& scene =
            train_scenes[order[(step * cfg.batch + b) % order.size()]];
        CropSample s = make_crop(scene, cfg.crop, cfg.scale, cfg.crop_candidates, rng);

        auto enc_d = encode(tape.constant(s.up_lr), Modality::depth, lease, model.cfg);
        auto enc_r = encode(tape.constant(s.rgb), Modality::rgb, lease, model.cfg);
        Tensor<float> base = tape.constant(s.up_lr);
        auto [depth_pred, rgb_pred] = decode(enc_d.phi, enc_r.phi, lease, model.cfg, &base);

        auto lp_d = pixel_loss(depth_pred, tape.constant(s.depth_hr), cfg.pixel_mode);
        auto lp_r = pixel_loss(rgb_pred, tape.constant(s.rgb), cfg.pixel_mode);
        auto terms = decomposition_loss(enc_d.per_block, enc_r.per_block, model.cfg.sphere,
                                        cfg.dec_mode, cfg.dec_distance);
        pd = b == 0 ? lp_d : add(pd, lp_d);
        pr = b == 0 ? lp_r : add(pr, lp_r);
        dec_align = b == 0 ? terms.align : add(dec_align, terms.align);
        dec_sepn = b == 0 ? terms.sepn : add(dec_sepn, terms.sepn);
        dec = b == 0 ? terms.dec : add(dec, terms.dec);
      }
      const float inv_b = 1.0f / static_cast<float>(cfg.batch);
      DecompositionTerms<float> batch_terms{scale(dec_align, inv_b), scale(dec_sepn, inv_b),
                                            scale(dec, inv_b)};
      auto tot = total_loss(scale(pd, inv_b), scale(pr, inv_b), batch_terms,
                            static_cast<Tensor<float>*>(nullptr), cfg.loss, false);
      if (!std::isfinite(tot.report.total))
        throw numeric_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                            " step " + std::to_string(step));
      epoch_loss += tot.report.total;

      GradMap<float> node_grads = tape.backward(tot.total);
      NamedGrads<float> grads = grads_by_name(lease, node_grads);
      opt.step(model.params, grads);

      ++result.steps;
      if (loss_csv) {
        const LossReport& r = tot.report;
        *loss_csv << result.steps << "," << r.pixel_depth << "," << r.pixel_rgb << ","
                  << r.dec_align << "," << r.dec_sepn << "," << r.dec << "," << r.scr << ","
                  << r.total << "\n";
      }
    }
    epoch_loss /= steps_per_epoch;
    if (epoch == 1) result.first_epoch_loss = epoch_loss;
    result.last_epoch_loss = epoch_loss;

    if (scr_enabled && epoch % cfg.scr_period == 0) {
      const ScenePair& scene = train_scenes[rng.uniform_int(0, static_cast<int>(train_scenes.size()) - 1)];
      DepthMap pred = predict_depth(model, scene);
      int k_anchors = cfg.scr_anchors > 0 ? cfg.scr_anchors : cfg.batch;
      auto triplets = sample_triplets(pred.values, scene.depth_hr, scene.rgb, *dpc, cfg.scr_patch,
                                      cfg.scr_negatives, k_anchors, cfg.defect, rng.bits());
      LossReport r = scr_step(model, triplets, scr_opt, cfg.loss);
      ++result.scr_events;
      if (loss_csv) {
        ++result.steps;
        *loss_csv << result.steps << ",0,0,0,0,0," << r.scr << "," << r.total << "\n";
      }
    }

    if (!val_scenes.empty()) {
      double val = evaluate(model, val_scenes).mean_model;
      if (result.best_epoch < 0 || val < result.best_val_rmse) {
        result.best_val_rmse = val;
        result.best_epoch = epoch;
        if (!cfg.ckpt_out.empty()) save_model(cfg.ckpt_out, model, cfg.scale);
      }
    } else if (!cfg.ckpt_out.empty()) {
      save_model(cfg.ckpt_out, model, cfg.scale);
    }
  }
  return result;
}

}  // namespace ssdn
