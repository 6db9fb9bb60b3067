#pragma once

#include "ssdn/gradcheck.hpp"
#include "ssdn/losses.hpp"

namespace ssdn {

struct GradSuiteResult {
  std::string name;
  double max_rel_err = 0;
  double tol = 1e-4;
  bool pass = false;
};

// Finite-difference verification of every differentiable operation at toy
// sizes, 64-bit. Returns one row per op family.
inline std::vector<GradSuiteResult> run_gradcheck_suites(uint64_t seed = 2024) {
  std::vector<GradSuiteResult> results;
  auto run = [&](const std::string& name, const GradCheckFn& f,
                 const std::map<std::string, Array<double>>& params, double tol = 1e-4,
                 int64_t max_coords = 0) {
    GradCheckReport r = gradient_check(f, params, 1e-5, tol, max_coords);
    results.push_back({name, r.max_rel_err, tol, r.pass});
  };

  Rng rng(Rng::mix(seed, "gradsuite"));
  auto uniform = [&](Shape s, double lo, double hi) {
    return Array<double>::random_uniform(std::move(s), rng, lo, hi);
  };

  {  // elementwise kinds, all in one composite
    std::map<std::string, Array<double>> p{{"x", uniform({8}, 0.15, 0.85)},
                                           {"y", uniform({8}, 0.15, 0.85)}};
    run("elementwise", [](Tape<double>& tp, const std::map<std::string, Tensor<double>>& p) {
      auto x = p.at("x"), y = p.at("y");
      auto t = add(mul(gelu(x), sin(y)), div(sqrt(x), add(y, 2.0)));
      t = add(t, cos(square(x)));
      t = add(t, exp(neg(y)));
      t = add(t, log(add(x, 1.0)));
      t = add(t, arccos(clamp(sub(x, y), -0.9, 0.9)));
      return sum_all(add(scale(t, 0.7), sub(x, y)));
    }, p);
  }
  {  // convolutions, all kinds plus bias
    std::map<std::string, Array<double>> p{{"x", uniform({5, 4, 3}, -1, 1)},
                                           {"k3", uniform({3, 3, 3, 2}, -0.5, 0.5)},
                                           {"k1", uniform({1, 1, 3, 4}, -0.5, 0.5)},
                                           {"kd", uniform({3, 3, 3}, -0.5, 0.5)},
                                           {"b", uniform({2}, -0.2, 0.2)}};
    run("conv2d", [](Tape<double>& tp, const std::map<std::string, Tensor<double>>& p) {
      auto a = conv2d(p.at("x"), p.at("k3"), ConvKind::k3x3, &p.at("b"));
      auto b = conv2d(p.at("x"), p.at("k1"), ConvKind::k1x1);
      auto c = conv2d(p.at("x"), p.at("kd"), ConvKind::depthwise3x3);
      return add(add(sum_all(square(a)), sum_all(square(b))), sum_all(square(c)));
    }, p);
  }
  {  // channel layer norm
    std::map<std::string, Array<double>> p{{"x", uniform({3, 3, 4}, -1, 1)},
                                           {"g", uniform({4}, 0.5, 1.5)},
                                           {"b", uniform({4}, -0.5, 0.5)}};
    run("layer_norm_channels", [](Tape<double>& tp, const std::map<std::string, Tensor<double>>& p) {
      return sum_all(square(layer_norm_channels(p.at("x"), p.at("g"), p.at("b"))));
    }, p);
  }
  {  // dense ops behind the attention block
    std::map<std::string, Array<double>> p{{"a", uniform({3, 5}, -1, 1)},
                                           {"b", uniform({5, 4}, -1, 1)}};
    run("matmul/softmax/l2norm", [](Tape<double>& tp, const std::map<std::string, Tensor<double>>& p) {
      auto m = matmul(l2_normalize_rows(p.at("a")), softmax_rows(p.at("b")));
      return sum_all(square(transpose2d(m)));
    }, p);
  }
  {  // reductions, pooling, resize
    std::map<std::string, Array<double>> p{{"x", uniform({4, 4, 2}, -1, 1)}};
    run("pool/reduce/bicubic", [](Tape<double>& tp, const std::map<std::string, Tensor<double>>& p) {
      auto pooled = avg_pool2(p.at("x"));
      auto up = bicubic_resize_op(p.at("x"), 7, 6);
      auto g = global_avg_pool(mul(p.at("x"), broadcast_channel(channel_sum(p.at("x")), 2)));
      return add(add(sum_all(square(pooled)), sum_all(square(up))), sum_all(square(g)));
    }, p);
  }

  ModelConfig tiny;
  tiny.blocks = 1;
  tiny.channels = 4;
  tiny.heads = 2;
  auto tiny_model = build_model<double>(tiny, Rng::mix(seed, "gradsuite-model"));
  {
    Rng jitter(Rng::mix(seed, "gradsuite-jitter"));
    for (auto& [name, arr] : tiny_model.params.items())
      for (auto& v : arr.data) v += 0.02 * jitter.normal();
  }
  auto lease_from = [](Tape<double>& tp, const std::map<std::string, Tensor<double>>& p) {
    Lease<double> l;
    l.tape = &tp;
    for (const auto& [name, t] : p) l.tensors.emplace(name, t);
    return l;
  };
  auto enc_params = [&](const std::string& prefix) {
    std::map<std::string, Array<double>> p;
    for (const auto& [name, arr] : tiny_model.params.items())
      if (name.rfind(prefix, 0) == 0) p[name] = arr;
    return p;
  };

  {  // channel attention (the ln parameters ride along with zero gradient)
    auto p = enc_params("enc_d/b0/");
    p["x"] = uniform({4, 3, 4}, -1, 1);
    run("channel_attention", [&](Tape<double>& tp, const std::map<std::string, Tensor<double>>& pp) {
      auto l = lease_from(tp, pp);
      auto bp = block_params(l, "enc_d/b0");
      return sum_all(square(channel_attention(pp.at("x"), bp.attn, 2)));
    }, p);
  }
  {  // gated feed-forward
    auto p = enc_params("enc_d/b0/");
    p["x"] = uniform({4, 3, 4}, -1, 1);
    run("gated_ffn", [&](Tape<double>& tp, const std::map<std::string, Tensor<double>>& pp) {
      auto l = lease_from(tp, pp);
      auto bp = block_params(l, "enc_d/b0");
      return sum_all(square(gated_ffn(pp.at("x"), bp.ffn)));
    }, p);
  }

  SphereConfig sc;
  sc.radius = 1.2;
  const Array<double> w_sphere = uniform({3, 3, 4}, -1, 1);
  {  // exp map, both variants, weighted probes
    std::map<std::string, Array<double>> p{{"v", uniform({3, 3, 3}, -0.8, 0.8)}};
    run("exp_map tangent_lift", [&](Tape<double>& tp, const std::map<std::string, Tensor<double>>& pp) {
      return sum_all(mul(exp_map(pp.at("v"), sc), tp.constant(w_sphere)));
    }, p, 1e-4);
    SphereConfig sv = sc;
    sv.variant = SphereVariant::verbatim;
    run("exp_map verbatim", [&](Tape<double>& tp, const std::map<std::string, Tensor<double>>& pp) {
      return sum_all(mul(exp_map(pp.at("v"), sv), tp.constant(w_sphere)));
    }, p);
  }
  {  // log map via the round trip, plus both distances
    std::map<std::string, Array<double>> p{{"a", uniform({3, 3, 3}, -0.9, 0.9)},
                                           {"b", uniform({3, 3, 3}, -0.9, 0.9)}};
    run("log_map/distances", [&](Tape<double>& tp, const std::map<std::string, Tensor<double>>& pp) {
      auto rt = log_map(exp_map(pp.at("a"), sc), sc);
      auto d1 = spherical_feature_distance(pp.at("a"), pp.at("b"), sc);
      auto d2 = cosine_distance_raw(add(pp.at("a"), 2.0), add(pp.at("b"), 2.0));
      return add(add(sum_all(square(rt)), d1), d2);
    }, p);
  }
  {  // pixel loss
    std::map<std::string, Array<double>> p{{"pred", uniform({4, 4, 1}, 0, 1)}};
    const Array<double> target = uniform({4, 4, 1}, 0, 1);
    run("pixel_loss", [&, target](Tape<double>& tp, const std::map<std::string, Tensor<double>>& pp) {
      return pixel_loss(pp.at("pred"), tp.constant(target));
    }, p);
  }
  {  // decomposition loss, both modes
    std::map<std::string, Array<double>> p{{"da", uniform({3, 3, 4}, -0.7, 0.7)},
                                           {"ds", uniform({3, 3, 4}, -0.7, 0.7)},
                                           {"ra", uniform({3, 3, 4}, -0.7, 0.7)},
                                           {"rs", uniform({3, 3, 4}, -0.7, 0.7)}};
    for (DecMode mode : {DecMode::consistent, DecMode::verbatim}) {
      run(mode == DecMode::consistent ? "decomposition_loss consistent"
                                      : "decomposition_loss verbatim",
          [&, mode](Tape<double>& tp, const std::map<std::string, Tensor<double>>& pp) {
            std::vector<std::pair<Tensor<double>, Tensor<double>>> pbd{
                {exp_map(pp.at("da"), sc), exp_map(pp.at("ds"), sc)}};
            std::vector<std::pair<Tensor<double>, Tensor<double>>> pbr{
                {exp_map(pp.at("ra"), sc), exp_map(pp.at("rs"), sc)}};
            return decomposition_loss(pbd, pbr, sc, mode).dec;
          }, p);
    }
  }
  {  // contrastive refinement loss through the tiny depth encoder
    auto p = enc_params("enc_d/");
    Rng patch_rng(Rng::mix(seed, "gradsuite-patches"));
    const Array<double> anchor = Array<double>::random_uniform({6, 6, 1}, patch_rng, 0, 1);
    const Array<double> pos = Array<double>::random_uniform({6, 6, 1}, patch_rng, 0, 1);
    const Array<double> neg = Array<double>::random_uniform({6, 6, 1}, patch_rng, 0, 1);
    run("scr_loss", [&](Tape<double>& tp, const std::map<std::string, Tensor<double>>& pp) {
      auto l = lease_from(tp, pp);
      return scr_loss<double>({anchor}, {pos}, {{neg}}, l, tiny).loss;
    }, p, 1e-4, 8);
  }
  {  // total loss through the whole model at toy size
    std::map<std::string, Array<double>> p;
    for (const auto& [name, arr] : tiny_model.params.items()) p[name] = arr;
    Rng img_rng(Rng::mix(seed, "gradsuite-images"));
    const Array<double> dimg = Array<double>::random_uniform({6, 6, 1}, img_rng, 0, 1);
    const Array<double> rimg = Array<double>::random_uniform({6, 6, 3}, img_rng, 0, 1);
    const Array<double> gt = Array<double>::random_uniform({6, 6, 1}, img_rng, 0, 1);
    run("total_loss (full model)",
        [&](Tape<double>& tp, const std::map<std::string, Tensor<double>>& pp) {
          auto l = lease_from(tp, pp);
          auto enc_d = encode(tp.constant(dimg), Modality::depth, l, tiny);
          auto enc_r = encode(tp.constant(rimg), Modality::rgb, l, tiny);
          auto [dpred, rpred] = decode(enc_d.phi, enc_r.phi, l, tiny);
          auto terms = decomposition_loss(enc_d.per_block, enc_r.per_block, tiny.sphere);
          LossWeights w;
          return total_loss(pixel_loss(dpred, tp.constant(gt)),
                            pixel_loss(rpred, tp.constant(rimg)), terms,
                            static_cast<Tensor<double>*>(nullptr), w, false)
              .total;
        },
        p, 1e-3, 6);
  }
  return results;
}

}  // namespace ssdn
