#pragma once

#include <vector>

#include "ssdn/ops.hpp"

namespace ssdn {

template <typename T>
struct AttentionParams {
  Tensor<T> qw, qb, qd;  // 1x1 projection + depthwise 3x3, per path
  Tensor<T> kw, kb, kd;
  Tensor<T> vw, vb, vd;
  Tensor<T> temperature;  // [heads]
  Tensor<T> ow, ob;       // 1x1 output projection
};

// Channel-wise (transposed) attention: per head, every channel becomes a
// descriptor by flattening its pixels; attention mixes channels, not
// positions, so the map stays cheap at large spatial sizes.
template <typename T>
Tensor<T> channel_attention(const Tensor<T>& x, const AttentionParams<T>& p, int heads,
                            std::vector<Tensor<T>>* attn_debug = nullptr) {
  const Shape& s = x.shape();
  require(s.size() == 3, "channel_attention: want rank-3");
  const int h = s[0], w = s[1], c = s[2];
  require(heads >= 1 && c % heads == 0, "channel_attention: heads must divide channels");
  const int ch = c / heads;
  const int hw = h * w;

  auto q = conv2d(conv2d(x, p.qw, ConvKind::k1x1, &p.qb), p.qd, ConvKind::depthwise3x3);
  auto k = conv2d(conv2d(x, p.kw, ConvKind::k1x1, &p.kb), p.kd, ConvKind::depthwise3x3);
  auto v = conv2d(conv2d(x, p.vw, ConvKind::k1x1, &p.vb), p.vd, ConvKind::depthwise3x3);

  Tensor<T> merged;
  for (int hd = 0; hd < heads; ++hd) {
    auto rows = [&](const Tensor<T>& t) {
      return transpose2d(reshape(slice_lastdim(t, hd * ch, (hd + 1) * ch), {hw, ch}));
    };
    auto qh = l2_normalize_rows(rows(q));
    auto kh = l2_normalize_rows(rows(k));
    auto logits = mul(matmul(qh, transpose2d(kh)), slice_lastdim(p.temperature, hd, hd + 1));
    auto attn = softmax_rows(logits);  // (c/heads)^2
    if (attn_debug) attn_debug->push_back(attn);
    auto out_rows = matmul(attn, rows(v));
    auto out_map = reshape(transpose2d(out_rows), {h, w, ch});
    merged = hd == 0 ? out_map : concat_lastdim(merged, out_map);
  }
  return conv2d(merged, p.ow, ConvKind::k1x1, &p.ob);
}

template <typename T>
struct FfnParams {
  Tensor<T> w1, b1, d1;  // gate branch
  Tensor<T> w2, b2, d2;  // value branch
  Tensor<T> wo, bo;
};

// Gated feed-forward: two 1x1 -> depthwise-3x3 branches, gelu gate on one,
// elementwise product, 1x1 back to the input width.
template <typename T>
Tensor<T> gated_ffn(const Tensor<T>& x, const FfnParams<T>& p) {
  auto gate = conv2d(conv2d(x, p.w1, ConvKind::k1x1, &p.b1), p.d1, ConvKind::depthwise3x3);
  auto val = conv2d(conv2d(x, p.w2, ConvKind::k1x1, &p.b2), p.d2, ConvKind::depthwise3x3);
  auto mixed = mul(gelu(gate), val);
  return conv2d(mixed, p.wo, ConvKind::k1x1, &p.bo);
}

template <typename T>
struct BlockParams {
  Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b;
  AttentionParams<T> attn;
  FfnParams<T> ffn;
};

// Pre-normalized attention and FFN, each with a residual connection.
template <typename T>
Tensor<T> transformer_block(const Tensor<T>& x, const BlockParams<T>& p, int heads) {
  auto a = add(x, channel_attention(layer_norm_channels(x, p.ln1_g, p.ln1_b), p.attn, heads));
  return add(a, gated_ffn(layer_norm_channels(a, p.ln2_g, p.ln2_b), p.ffn));
}

}  // namespace ssdn
