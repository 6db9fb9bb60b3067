#pragma once

#include <cmath>
#include <vector>

#include "ssdn/array.hpp"

namespace ssdn {

// Cubic convolution kernel (two-parameter family, a = -0.5), 4-tap support.
inline double cubic_weight(double x) {
  x = std::abs(x);
  if (x <= 1.0) return (1.5 * x - 2.5) * x * x + 1.0;
  if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
  return 0.0;
}

namespace detail {

struct Tap {
  int idx[4];
  double w[4];
};

// half-sample reflection: ...cba|abc...|cba...
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

inline std::vector<Tap> cubic_taps(int in_n, int out_n) {
  std::vector<Tap> taps(out_n);
  double step = static_cast<double>(in_n) / out_n;
  for (int o = 0; o < out_n; ++o) {
    double src = (o + 0.5) * step - 0.5;
    int i0 = static_cast<int>(std::floor(src));
    for (int t = 0; t < 4; ++t) {
      int i = i0 - 1 + t;
      taps[o].idx[t] = reflect_index(i, in_n);
      taps[o].w[t] = cubic_weight(src - i);
    }
  }
  return taps;
}

}  // namespace detail

// Separable bicubic resize of an H x W x C map. Linear in pixel values;
// exact identity when the output size equals the input size.
template <typename T>
Array<T> bicubic_resize(const Array<T>& img, int out_h, int out_w) {
  require(img.rank() == 3, "bicubic_resize: want rank-3 array");
  require(out_h >= 1 && out_w >= 1, "bicubic_resize: zero output dims");
  const int h = img.dim(0), w = img.dim(1), c = img.dim(2);
  auto tx = detail::cubic_taps(w, out_w);
  auto ty = detail::cubic_taps(h, out_h);

  Array<double> tmp({h, out_w, c});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const auto& tp = tx[x];
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (int t = 0; t < 4; ++t)
          acc += tp.w[t] * static_cast<double>(img.at(y, tp.idx[t], ch));
        tmp.at(y, x, ch) = acc;
      }
    }

  Array<T> out({out_h, out_w, c});
  for (int y = 0; y < out_h; ++y) {
    const auto& tp = ty[y];
    for (int x = 0; x < out_w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (int t = 0; t < 4; ++t) acc += tp.w[t] * tmp.at(tp.idx[t], x, ch);
        out.at(y, x, ch) = static_cast<T>(acc);
      }
  }
  return out;
}

// Adjoint of bicubic_resize as a linear map (gradient pass-through).
template <typename T>
Array<T> bicubic_resize_adjoint(const Array<T>& gout, int in_h, int in_w) {
  require(gout.rank() == 3, "bicubic_resize_adjoint: want rank-3 array");
  const int oh = gout.dim(0), ow = gout.dim(1), c = gout.dim(2);
  auto tx = detail::cubic_taps(in_w, ow);
  auto ty = detail::cubic_taps(in_h, oh);

  Array<double> tmp({in_h, ow, c});
  for (int y = 0; y < oh; ++y) {
    const auto& tp = ty[y];
    for (int x = 0; x < ow; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double g = static_cast<double>(gout.at(y, x, ch));
        for (int t = 0; t < 4; ++t) tmp.at(tp.idx[t], x, ch) += tp.w[t] * g;
      }
  }

  Array<T> din({in_h, in_w, c});
  for (int y = 0; y < in_h; ++y)
    for (int x = 0; x < ow; ++x) {
      const auto& tp = tx[x];
      for (int ch = 0; ch < c; ++ch) {
        double g = tmp.at(y, x, ch);
        for (int t = 0; t < 4; ++t) din.at(y, tp.idx[t], ch) += static_cast<T>(tp.w[t] * g);
      }
    }
  return din;
}

}  // namespace ssdn
