#pragma once

#include <vector>

#include "ssdn/network.hpp"

namespace ssdn {

struct LossWeights {
  double alpha1 = 1e-2;  // RGB reconstruction
  double alpha2 = 1e-3;  // feature decomposition
  double alpha3 = 1e-2;  // contrastive refinement (zero outside refinement epochs)

  void validate() const {
    require(alpha1 >= 0 && alpha2 >= 0 && alpha3 >= 0, "LossWeights: weights must be >= 0");
  }
};

struct LossReport {
  double pixel_depth = 0, pixel_rgb = 0;
  double dec_align = 0, dec_sepn = 0, dec = 0;
  double scr = 0;
  double total = 0;

  static constexpr const char* csv_header() {
    return "step,pixel_depth,pixel_rgb,dec_align,dec_sepn,dec,scr,total";
  }
};

enum class PixelMode { sum, mean };  // squared-norm sum (default) or per-pixel mean
enum class DecMode { consistent, verbatim };
enum class DecDistance { spherical, l2 };

// Squared L2 reconstruction error of one sample.
template <typename T>
Tensor<T> pixel_loss(const Tensor<T>& pred, const Tensor<T>& target,
                     PixelMode mode = PixelMode::sum) {
  require(pred.shape() == target.shape(), "pixel_loss: shape mismatch");
  auto ss = sum_all(square(sub(pred, target)));
  if (mode == PixelMode::mean)
    ss = scale(ss, static_cast<T>(1.0 / static_cast<double>(pred.numel())));
  return ss;
}

template <typename T>
struct DecompositionTerms {
  Tensor<T> align, sepn, dec;
};

// Alignment pulls the shared halves together (distance -> 0); separation
// pushes the private halves to orthogonality (distance -> 1 per pixel).
// In consistent mode the (1 - sepn)^2 penalty binds per pixel: squaring the
// map-level mean leaves individual pixels free to trade +-cosine against
// each other, which never reaches orthogonality. verbatim mode keeps the
// printed map-level form, align - (1 - sepn)^2, whose descent runs the
// separation to a cosine extreme instead.
template <typename T>
DecompositionTerms<T> decomposition_loss(
    const std::vector<std::pair<Tensor<T>, Tensor<T>>>& per_block_d,
    const std::vector<std::pair<Tensor<T>, Tensor<T>>>& per_block_r,
    const SphereConfig& cfg, DecMode mode = DecMode::consistent,
    DecDistance distance = DecDistance::spherical) {
  require(!per_block_d.empty() && per_block_d.size() == per_block_r.size(),
          "decomposition_loss: per-block list length mismatch");
  const int p_count = static_cast<int>(per_block_d.size());
  const T inv_p = static_cast<T>(1.0 / p_count);

  auto block_distance = [&](const Tensor<T>& a, const Tensor<T>& b) {
    if (distance == DecDistance::spherical) return sphere_distance(a, b, cfg);
    // raw-feature squared L2 on the log-mapped halves
    auto la = log_map(a, cfg);
    auto lb = log_map(b, cfg);
    double factor = cfg.reduction == Reduction::mean
                        ? 1.0 / (static_cast<double>(a.shape()[0]) * a.shape()[1])
                        : 1.0;
    return scale(sum_all(square(sub(la, lb))), static_cast<T>(factor));
  };

  Tensor<T> align, sepn, pixel_gap;
  for (int p = 0; p < p_count; ++p) {
    require(per_block_d[p].first.shape() == per_block_r[p].first.shape() &&
                per_block_d[p].second.shape() == per_block_r[p].second.shape(),
            "decomposition_loss: block shape mismatch");
    auto a = block_distance(per_block_d[p].first, per_block_r[p].first);
    auto s = block_distance(per_block_d[p].second, per_block_r[p].second);
    align = p == 0 ? a : add(align, a);
    sepn = p == 0 ? s : add(sepn, s);
    if (mode == DecMode::consistent && distance == DecDistance::spherical) {
      auto smap = sphere_distance_map(per_block_d[p].second, per_block_r[p].second, cfg);
      auto g = mean_all(square(sub(T(1), smap)));
      pixel_gap = p == 0 ? g : add(pixel_gap, g);
    }
  }
  align = scale(align, inv_p);
  sepn = scale(sepn, inv_p);

  DecompositionTerms<T> out;
  out.align = align;
  out.sepn = sepn;
  if (mode == DecMode::verbatim)
    out.dec = sub(align, square(sub(T(1), sepn)));
  else if (distance == DecDistance::spherical)
    out.dec = add(align, scale(pixel_gap, inv_p));
  else
    out.dec = add(align, square(sub(T(1), sepn)));
  return out;
}

template <typename T>
struct ScrResult {
  Tensor<T> loss;
  bool degenerate = false;  // some denominator fell below the floor
};

// Contrastive refinement: anchors against their ground-truth positives,
// normalized by the summed distance to the defect negatives. All patches go
// through the depth encoder; distances are taken in spherical space.
template <typename T>
ScrResult<T> scr_loss(const std::vector<Array<T>>& anchors,
                      const std::vector<Array<T>>& positives,
                      const std::vector<std::vector<Array<T>>>& negatives, const Lease<T>& l,
                      const ModelConfig& cfg, T denom_floor = static_cast<T>(1e-8)) {
  require(anchors.size() == positives.size() && anchors.size() == negatives.size(),
          "scr_loss: triplet list size mismatch");
  Tape<T>& tape = *l.tape;
  ScrResult<T> out;
  Tensor<T> acc;
  for (size_t k = 0; k < anchors.size(); ++k) {
    require(!negatives[k].empty(), "scr_loss: at least one negative required");
    auto ea = encode(tape.constant(anchors[k]), Modality::depth, l, cfg).phi;
    auto ep = encode(tape.constant(positives[k]), Modality::depth, l, cfg).phi;
    auto num = spherical_feature_distance(ea, ep, cfg.sphere);
    Tensor<T> den;
    for (size_t n = 0; n < negatives[k].size(); ++n) {
      auto en = encode(tape.constant(negatives[k][n]), Modality::depth, l, cfg).phi;
      auto d = spherical_feature_distance(ea, en, cfg.sphere);
      den = n == 0 ? d : add(den, d);
    }
    if (den.scalar() < denom_floor) {
      out.degenerate = true;
      den = tape.scalar_const(denom_floor);
    }
    auto q = div(num, den);
    acc = k == 0 ? q : add(acc, q);
  }
  out.loss = acc;
  return out;
}

template <typename T>
struct TotalLoss {
  Tensor<T> total;
  LossReport report;
};

// Weighted sum of the four terms. The SCR weight is forced to zero when the
// epoch is not a refinement epoch. The report recomputes the combination in
// double so its identity holds tighter than 1e-9 relative in either precision.
template <typename T>
TotalLoss<T> total_loss(const Tensor<T>& pixel_depth, const Tensor<T>& pixel_rgb,
                        const DecompositionTerms<T>& dec, const Tensor<T>* scr,
                        const LossWeights& w, bool scr_epoch) {
  w.validate();
  const double a3 = scr_epoch ? w.alpha3 : 0.0;
  Tensor<T> total = pixel_depth;
  total = add(total, scale(pixel_rgb, static_cast<T>(w.alpha1)));
  total = add(total, scale(dec.dec, static_cast<T>(w.alpha2)));
  if (scr && a3 != 0.0) total = add(total, scale(*scr, static_cast<T>(a3)));

  TotalLoss<T> out;
  out.total = total;
  out.report.pixel_depth = static_cast<double>(pixel_depth.scalar());
  out.report.pixel_rgb = static_cast<double>(pixel_rgb.scalar());
  out.report.dec_align = static_cast<double>(dec.align.scalar());
  out.report.dec_sepn = static_cast<double>(dec.sepn.scalar());
  out.report.dec = static_cast<double>(dec.dec.scalar());
  out.report.scr = scr ? static_cast<double>(scr->scalar()) : 0.0;
  out.report.total = out.report.pixel_depth + w.alpha1 * out.report.pixel_rgb +
                     w.alpha2 * out.report.dec + a3 * out.report.scr;
  return out;
}

}  // namespace ssdn
