#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ssdn/ops.hpp"

namespace ssdn {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  int64_t coords_checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  double tol = 1e-4;
  bool pass = false;
};

// Scalar function of a named parameter set, evaluated on a fresh tape.
using GradCheckFn =
    std::function<Tensor<double>(Tape<double>&, const std::map<std::string, Tensor<double>>&)>;

// Central-difference verification of reverse-mode gradients, 64-bit only.
// Relative error per coordinate is |analytic - central| / max(1, |central|);
// `max_coords` > 0 checks a deterministic strided subset per parameter.
inline GradCheckReport gradient_check(const GradCheckFn& f,
                                      const std::map<std::string, Array<double>>& params,
                                      double step = 1e-5, double tol = 1e-4,
                                      int64_t max_coords = 0) {
  auto evaluate = [&](const std::map<std::string, Array<double>>& p, bool with_grad)
      -> std::pair<double, std::map<std::string, Array<double>>> {
    Tape<double> tape;
    std::map<std::string, Tensor<double>> leased;
    std::map<std::string, int> ids;
    for (const auto& [name, value] : p) {
      Tensor<double> t = tape.leaf(value, with_grad);
      ids[name] = t.id();
      leased.emplace(name, t);
    }
    Tensor<double> loss = f(tape, leased);
    require(loss.numel() == 1, "gradient_check: f must be scalar");
    double loss_v = loss.scalar();
    std::map<std::string, Array<double>> grads;
    if (with_grad) {
      GradMap<double> g = tape.backward(loss);
      for (const auto& [name, id] : ids) grads.emplace(name, std::move(g.at(id)));
    }
    return {loss_v, std::move(grads)};
  };

  auto [loss0, analytic] = evaluate(params, true);
  require(std::isfinite(loss0), "gradient_check: non-finite loss");
  for (const auto& [name, g] : analytic)
    require(g.all_finite(), "gradient_check: non-finite analytic gradient for " + name);

  GradCheckReport report;
  report.tol = tol;
  std::map<std::string, Array<double>> work = params;
  for (const auto& [name, base] : params) {
    GradCheckEntry entry;
    entry.name = name;
    const int64_t n = base.size();
    int64_t count = (max_coords > 0 && max_coords < n) ? max_coords : n;
    for (int64_t j = 0; j < count; ++j) {
      int64_t i = (count == n) ? j : (j * (n - 1)) / std::max<int64_t>(count - 1, 1);
      double saved = work.at(name).data[i];
      work.at(name).data[i] = saved + step;
      double fp = evaluate(work, false).first;
      work.at(name).data[i] = saved - step;
      double fm = evaluate(work, false).first;
      work.at(name).data[i] = saved;
      double central = (fp - fm) / (2.0 * step);
      double rel = std::abs(analytic.at(name).data[i] - central) /
                   std::max(1.0, std::abs(central));
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      ++entry.coords_checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace ssdn
