#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ssdn/blocks.hpp"
#include "ssdn/checkpoint.hpp"
#include "ssdn/sphere.hpp"

namespace ssdn {

struct ModelConfig {
  int blocks = 4;        // encoder depth P
  int channels = 64;     // feature width C, must be even
  int heads = 4;
  double expansion = 2.0;
  bool residual_output = true;
  bool shared_encoders = false;  // ablation: one block stack for both modalities
  bool bypass_sphere = false;    // skip the exp/log round trip in the forward pass
  SphereConfig sphere;

  int half() const { return channels / 2; }
  int decoder_blocks() const { return blocks / 2 > 0 ? blocks / 2 : 1; }
  int depth_decoder_channels() const { return channels + channels / 2; }

  void validate() const {
    require(blocks >= 1, "ModelConfig: blocks must be >= 1");
    require(channels >= 2 && channels % 2 == 0, "ModelConfig: channels must be even");
    require(heads >= 1 && channels % heads == 0, "ModelConfig: heads must divide channels");
    require(depth_decoder_channels() % heads == 0,
            "ModelConfig: heads must divide channels + channels/2");
    require(expansion >= 1.0, "ModelConfig: expansion must be >= 1");
    sphere.validate();
  }
};

// Named persistent parameter storage, insertion-ordered for determinism.
template <typename T>
class ParamStore {
 public:
  Array<T>& create(const std::string& name, Array<T> init) {
    require(!index_.count(name), "ParamStore: duplicate parameter " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(init));
    return items_.back().second;
  }
  Array<T>& at(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), "ParamStore: unknown parameter " + name);
    return items_[it->second].second;
  }
  const Array<T>& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::pair<std::string, Array<T>>>& items() const { return items_; }
  std::vector<std::pair<std::string, Array<T>>>& items() { return items_; }
  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& [_, a] : items_) n += a.size();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Array<T>>> items_;
  std::unordered_map<std::string, size_t> index_;
};

template <typename T>
struct Model {
  ModelConfig cfg;
  ParamStore<T> params;
};

namespace netdetail {

template <typename T>
Array<T> conv_init(Shape shape, int fan_in, Rng& rng) {
  double stddev = std::sqrt(2.0 / fan_in);
  return Array<T>::random_normal(std::move(shape), rng, 0.0, stddev);
}

template <typename T>
void add_block_params(ParamStore<T>& ps, const std::string& prefix, int c, int heads,
                      double expansion, Rng& rng) {
  const int e = static_cast<int>(c * expansion + 0.5);
  ps.create(prefix + "/ln1/g", Array<T>::full({c}, T(1)));
  ps.create(prefix + "/ln1/b", Array<T>::zeros({c}));
  for (const char* path : {"q", "k", "v"}) {
    ps.create(prefix + "/attn/" + path + "w", conv_init<T>({1, 1, c, c}, c, rng));
    ps.create(prefix + "/attn/" + path + "b", Array<T>::zeros({c}));
    ps.create(prefix + "/attn/" + path + "d", conv_init<T>({3, 3, c}, 9, rng));
  }
  ps.create(prefix + "/attn/temp", Array<T>::full({heads}, T(1)));
  ps.create(prefix + "/attn/ow", conv_init<T>({1, 1, c, c}, c, rng));
  ps.create(prefix + "/attn/ob", Array<T>::zeros({c}));
  ps.create(prefix + "/ln2/g", Array<T>::full({c}, T(1)));
  ps.create(prefix + "/ln2/b", Array<T>::zeros({c}));
  ps.create(prefix + "/ffn/w1", conv_init<T>({1, 1, c, e}, c, rng));
  ps.create(prefix + "/ffn/b1", Array<T>::zeros({e}));
  ps.create(prefix + "/ffn/d1", conv_init<T>({3, 3, e}, 9, rng));
  ps.create(prefix + "/ffn/w2", conv_init<T>({1, 1, c, e}, c, rng));
  ps.create(prefix + "/ffn/b2", Array<T>::zeros({e}));
  ps.create(prefix + "/ffn/d2", conv_init<T>({3, 3, e}, 9, rng));
  ps.create(prefix + "/ffn/wo", conv_init<T>({1, 1, e, c}, e, rng));
  ps.create(prefix + "/ffn/bo", Array<T>::zeros({c}));
}

}  // namespace netdetail

// Two encoders (depth/RGB), two decoders. The depth decoder's head conv is
// zero-initialized so an untrained model reproduces its residual base.
template <typename T>
Model<T> build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model<T> m;
  m.cfg = cfg;
  Rng rng(Rng::mix(seed, "model-init"));
  const int c = cfg.channels;

  auto add_encoder = [&](const std::string& name, int in_ch, bool with_blocks) {
    m.params.create(name + "/embed/w", netdetail::conv_init<T>({3, 3, in_ch, c}, 9 * in_ch, rng));
    m.params.create(name + "/embed/b", Array<T>::zeros({c}));
    if (with_blocks)
      for (int p = 0; p < cfg.blocks; ++p)
        netdetail::add_block_params(m.params, name + "/b" + std::to_string(p), c, cfg.heads,
                                    cfg.expansion, rng);
  };
  if (cfg.shared_encoders) {
    add_encoder("enc_d", 1, false);
    add_encoder("enc_r", 3, false);
    for (int p = 0; p < cfg.blocks; ++p)
      netdetail::add_block_params(m.params, "enc_sh/b" + std::to_string(p), c, cfg.heads,
                                  cfg.expansion, rng);
  } else {
    add_encoder("enc_d", 1, true);
    add_encoder("enc_r", 3, true);
  }

  const int cd = cfg.depth_decoder_channels();
  for (int p = 0; p < cfg.decoder_blocks(); ++p) {
    netdetail::add_block_params(m.params, "dec_d/b" + std::to_string(p), cd, cfg.heads,
                                cfg.expansion, rng);
    netdetail::add_block_params(m.params, "dec_r/b" + std::to_string(p), c, cfg.heads,
                                cfg.expansion, rng);
  }
  // both head convs start at zero: depth falls back to the residual base,
  // and the RGB reconstruction error starts at the image energy instead of
  // the random-projection magnitude of the features
  m.params.create("dec_d/head/w", Array<T>::zeros({3, 3, cd, 1}));
  m.params.create("dec_d/head/b", Array<T>::zeros({1}));
  m.params.create("dec_r/head/w", Array<T>::zeros({3, 3, c, 3}));
  m.params.create("dec_r/head/b", Array<T>::zeros({3}));
  return m;
}

// Per-step view of the parameters as tape leaves.
template <typename T>
struct Lease {
  Tape<T>* tape = nullptr;
  std::unordered_map<std::string, Tensor<T>> tensors;
  const Tensor<T>& operator()(const std::string& name) const {
    auto it = tensors.find(name);
    require(it != tensors.end(), "Lease: unknown parameter " + name);
    return it->second;
  }
  int node_id(const std::string& name) const { return (*this)(name).id(); }
};

template <typename T>
Lease<T> lease_params(Tape<T>& tape, const Model<T>& m, bool requires_grad = true) {
  Lease<T> l;
  l.tape = &tape;
  for (const auto& [name, value] : m.params.items())
    l.tensors.emplace(name, tape.leaf(value, requires_grad));
  return l;
}

template <typename T>
BlockParams<T> block_params(const Lease<T>& l, const std::string& prefix) {
  BlockParams<T> bp;
  bp.ln1_g = l(prefix + "/ln1/g");
  bp.ln1_b = l(prefix + "/ln1/b");
  bp.ln2_g = l(prefix + "/ln2/g");
  bp.ln2_b = l(prefix + "/ln2/b");
  bp.attn.qw = l(prefix + "/attn/qw");
  bp.attn.qb = l(prefix + "/attn/qb");
  bp.attn.qd = l(prefix + "/attn/qd");
  bp.attn.kw = l(prefix + "/attn/kw");
  bp.attn.kb = l(prefix + "/attn/kb");
  bp.attn.kd = l(prefix + "/attn/kd");
  bp.attn.vw = l(prefix + "/attn/vw");
  bp.attn.vb = l(prefix + "/attn/vb");
  bp.attn.vd = l(prefix + "/attn/vd");
  bp.attn.temperature = l(prefix + "/attn/temp");
  bp.attn.ow = l(prefix + "/attn/ow");
  bp.attn.ob = l(prefix + "/attn/ob");
  bp.ffn.w1 = l(prefix + "/ffn/w1");
  bp.ffn.b1 = l(prefix + "/ffn/b1");
  bp.ffn.d1 = l(prefix + "/ffn/d1");
  bp.ffn.w2 = l(prefix + "/ffn/w2");
  bp.ffn.b2 = l(prefix + "/ffn/b2");
  bp.ffn.d2 = l(prefix + "/ffn/d2");
  bp.ffn.wo = l(prefix + "/ffn/wo");
  bp.ffn.bo = l(prefix + "/ffn/bo");
  return bp;
}

enum class Modality { depth, rgb };

template <typename T>
struct EncoderOutput {
  Tensor<T> phi;  // H x W x C
  std::vector<std::pair<Tensor<T>, Tensor<T>>> per_block;  // spherical (aligned, separated)
};

template <typename T>
Tensor<T> embed_shallow(const Tensor<T>& img, const Tensor<T>& w, const Tensor<T>& b) {
  return conv2d(img, w, ConvKind::k3x3, &b);
}

template <typename T>
struct DecomposeResult {
  Tensor<T> phi_next;
  Tensor<T> aligned;    // H x W x (C/2 + 1), on-sphere under tangent_lift
  Tensor<T> separated;  // same
};

// One extraction step: block, channel split, spherical round trip on each
// half (retaining the on-sphere tensors for the decomposition loss), then
// re-concatenation. The uniform pre-scale applied before exp is undone
// after log so the round trip is exact under tangent_lift.
template <typename T>
DecomposeResult<T> decompose_step(const Tensor<T>& phi_prev, const BlockParams<T>& bp,
                                  const ModelConfig& cfg) {
  const int c = phi_prev.shape()[2];
  require(c % 2 == 0, "decompose_step: odd channel count");
  auto tilde = transformer_block(phi_prev, bp, cfg.heads);
  auto a_half = slice_lastdim(tilde, 0, c / 2);
  auto s_half = slice_lastdim(tilde, c / 2, c);
  auto ea = exp_map_scaled(a_half, cfg.sphere);
  auto es = exp_map_scaled(s_half, cfg.sphere);
  DecomposeResult<T> r;
  r.aligned = ea.on_sphere;
  r.separated = es.on_sphere;
  if (cfg.bypass_sphere) {
    r.phi_next = tilde;
    return r;
  }
  auto a_back = log_map(r.aligned, cfg.sphere);
  auto s_back = log_map(r.separated, cfg.sphere);
  if (ea.scaled) a_back = div(a_back, ea.factor);
  if (es.scaled) s_back = div(s_back, es.factor);
  r.phi_next = concat_lastdim(a_back, s_back);
  return r;
}

template <typename T>
EncoderOutput<T> encode(const Tensor<T>& img, Modality which, const Lease<T>& l,
                        const ModelConfig& cfg) {
  const std::string embed = which == Modality::depth ? "enc_d" : "enc_r";
  const std::string blocks = cfg.shared_encoders ? "enc_sh" : embed;
  const int in_ch = which == Modality::depth ? 1 : 3;
  require(img.shape()[2] == in_ch, "encode: wrong channel count for modality");

  EncoderOutput<T> out;
  out.phi = embed_shallow(img, l(embed + "/embed/w"), l(embed + "/embed/b"));
  for (int p = 0; p < cfg.blocks; ++p) {
    auto step = decompose_step(out.phi, block_params(l, blocks + "/b" + std::to_string(p)), cfg);
    out.phi = step.phi_next;
    out.per_block.emplace_back(step.aligned, step.separated);
  }
  return out;
}

// Depth decoder consumes the full depth features plus the shared (first)
// half of the RGB features; RGB decoder reconstructs the guide image.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> decode(const Tensor<T>& phi_d, const Tensor<T>& phi_r,
                                       const Lease<T>& l, const ModelConfig& cfg,
                                       const Tensor<T>* residual_base = nullptr) {
  const int c = cfg.channels;
  require(phi_d.shape()[2] == c && phi_r.shape()[2] == c, "decode: channel mismatch");
  auto din = concat_lastdim(phi_d, slice_lastdim(phi_r, 0, c / 2));
  for (int p = 0; p < cfg.decoder_blocks(); ++p)
    din = transformer_block(din, block_params(l, "dec_d/b" + std::to_string(p)), cfg.heads);
  auto depth = conv2d(din, l("dec_d/head/w"), ConvKind::k3x3, &l("dec_d/head/b"));
  if (cfg.residual_output && residual_base) depth = add(depth, *residual_base);

  auto rin = phi_r;
  for (int p = 0; p < cfg.decoder_blocks(); ++p)
    rin = transformer_block(rin, block_params(l, "dec_r/b" + std::to_string(p)), cfg.heads);
  auto rgb = conv2d(rin, l("dec_r/head/w"), ConvKind::k3x3, &l("dec_r/head/b"));
  return {depth, rgb};
}

// Full-image inference: bicubic LR upsample, both encoders, decode, return
// the depth channel. The refinement stage only applies during training.
template <typename T>
Array<T> super_resolve(const Array<T>& lr_depth, const Array<T>& rgb, const Model<T>& m,
                       int scale_factor) {
  require(scale_factor == 4 || scale_factor == 8 || scale_factor == 16,
          "super_resolve: scale must be 4, 8 or 16");
  require(lr_depth.rank() == 3 && lr_depth.dim(2) == 1, "super_resolve: depth must be h x w x 1");
  require(rgb.rank() == 3 && rgb.dim(2) == 3, "super_resolve: rgb must be H x W x 3");
  const int H = rgb.dim(0), W = rgb.dim(1);
  require(H == scale_factor * lr_depth.dim(0) && W == scale_factor * lr_depth.dim(1),
          "super_resolve: dimensions do not match the scale factor");

  Array<T> up = bicubic_resize(lr_depth, H, W);
  Tape<T> tape;
  Lease<T> l = lease_params(tape, m, false);
  auto enc_d = encode(tape.constant(up), Modality::depth, l, m.cfg);
  auto enc_r = encode(tape.constant(rgb), Modality::rgb, l, m.cfg);
  Tensor<T> base = tape.constant(up);
  auto [depth, rgb_hat] = decode(enc_d.phi, enc_r.phi, l, m.cfg, &base);
  (void)rgb_hat;
  return depth.value();
}

// --- checkpoint adapters ----------------------------------------------------

template <typename T>
void save_model(const std::string& path, const Model<T>& m, int scale_meta = 0) {
  NamedTensors nt;
  if (scale_meta > 0)
    nt.emplace_back("meta/scale",
                    Array<float>({1}, std::vector<float>{static_cast<float>(scale_meta)}));
  for (const auto& [name, arr] : m.params.items()) nt.emplace_back(name, cast_array<float>(arr));
  save_checkpoint(path, nt);
}

// Returns the stored training scale (0 when the checkpoint carries none).
template <typename T>
int load_model_params(const std::string& path, Model<T>& m) {
  NamedTensors nt = load_checkpoint(path);
  int scale_meta = 0;
  size_t loaded = 0;
  for (const auto& [name, arr] : nt) {
    if (name == "meta/scale") {
      scale_meta = static_cast<int>(arr.data.at(0));
      continue;
    }
    Array<T>& dst = m.params.at(name);
    require(dst.shape == arr.shape, "load_model_params: shape mismatch for " + name);
    dst = cast_array<T>(arr);
    ++loaded;
  }
  require(loaded == m.params.items().size(),
          "load_model_params: checkpoint does not cover every model parameter");
  return scale_meta;
}

}  // namespace ssdn
