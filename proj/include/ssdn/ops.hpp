#pragma once

#include <algorithm>
#include <cmath>

#include "ssdn/resample.hpp"
#include "ssdn/tape.hpp"

namespace ssdn {

namespace detail {

template <typename T>
void check_same_tape(const Tensor<T>& a, const Tensor<T>& b) {
  require(&a.tape() == &b.tape(), "op: tensors from different tapes");
}

constexpr double kSqrt1_2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

template <typename T>
T gelu_value(T x) {
  return static_cast<T>(0.5 * static_cast<double>(x) *
                        (1.0 + std::erf(static_cast<double>(x) * kSqrt1_2)));
}

template <typename T>
T gelu_partial(T x) {
  double xd = static_cast<double>(x);
  double cdf = 0.5 * (1.0 + std::erf(xd * kSqrt1_2));
  double pdf = kInvSqrt2Pi * std::exp(-0.5 * xd * xd);
  return static_cast<T>(cdf + xd * pdf);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise unary
// ---------------------------------------------------------------------------

// Generic unary op; `partials` holds d out_i / d in_i, saved at forward time.
template <typename T>
Tensor<T> unary_op(const char* name, const Tensor<T>& a, Array<T> out, Array<T> partials) {
  Tape<T>& tp = a.tape();
  int pa = a.id();
  return tp.emit(name, std::move(out), {pa},
                 [pa, partials = std::move(partials)](Tape<T>& t, const Array<T>& g) {
                   Array<T> da(partials.shape);
                   for (int64_t i = 0; i < g.size(); ++i)
                     da.data[i] = g.data[i] * partials.data[i];
                   t.accum(pa, da);
                 });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  const Array<T>& x = a.value();
  Array<T> out(x.shape), part(x.shape, T(-1));
  for (int64_t i = 0; i < x.size(); ++i) out.data[i] = -x.data[i];
  return unary_op("neg", a, std::move(out), std::move(part));
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  const Array<T>& x = a.value();
  Array<T> out(x.shape), part(x.shape);
  for (int64_t i = 0; i < x.size(); ++i) {
    out.data[i] = x.data[i] * x.data[i];
    part.data[i] = T(2) * x.data[i];
  }
  return unary_op("square", a, std::move(out), std::move(part));
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  const Array<T>& x = a.value();
  Array<T> out(x.shape), part(x.shape);
  for (int64_t i = 0; i < x.size(); ++i) {
    T r = std::sqrt(x.data[i]);
    out.data[i] = r;
    part.data[i] = r > T(0) ? T(0.5) / r : T(0);
  }
  return unary_op("sqrt", a, std::move(out), std::move(part));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  const Array<T>& x = a.value();
  Array<T> out(x.shape), part(x.shape);
  for (int64_t i = 0; i < x.size(); ++i) {
    out.data[i] = std::exp(x.data[i]);
    part.data[i] = out.data[i];
  }
  return unary_op("exp", a, std::move(out), std::move(part));
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  const Array<T>& x = a.value();
  Array<T> out(x.shape), part(x.shape);
  for (int64_t i = 0; i < x.size(); ++i) {
    out.data[i] = std::log(x.data[i]);
    part.data[i] = T(1) / x.data[i];
  }
  return unary_op("log", a, std::move(out), std::move(part));
}

template <typename T>
Tensor<T> sin(const Tensor<T>& a) {
  const Array<T>& x = a.value();
  Array<T> out(x.shape), part(x.shape);
  for (int64_t i = 0; i < x.size(); ++i) {
    out.data[i] = std::sin(x.data[i]);
    part.data[i] = std::cos(x.data[i]);
  }
  return unary_op("sin", a, std::move(out), std::move(part));
}

template <typename T>
Tensor<T> cos(const Tensor<T>& a) {
  const Array<T>& x = a.value();
  Array<T> out(x.shape), part(x.shape);
  for (int64_t i = 0; i < x.size(); ++i) {
    out.data[i] = std::cos(x.data[i]);
    part.data[i] = -std::sin(x.data[i]);
  }
  return unary_op("cos", a, std::move(out), std::move(part));
}

// Domain is checked with a 1e-7 clamping band; values beyond it are an
// error on a strict tape, silently clamped otherwise.
template <typename T>
Tensor<T> arccos(const Tensor<T>& a) {
  const Array<T>& x = a.value();
  constexpr double tol = 1e-7;
  Array<T> out(x.shape), part(x.shape);
  for (int64_t i = 0; i < x.size(); ++i) {
    double v = static_cast<double>(x.data[i]);
    if (a.tape().strict() && (v < -1.0 - tol || v > 1.0 + tol))
      fail("arccos: input outside [-1,1] beyond clamping tolerance");
    v = std::clamp(v, -1.0, 1.0);
    out.data[i] = static_cast<T>(std::acos(v));
    part.data[i] = static_cast<T>(-1.0 / std::sqrt(std::max(1.0 - v * v, 1e-24)));
  }
  return unary_op("arccos", a, std::move(out), std::move(part));
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  const Array<T>& x = a.value();
  Array<T> out(x.shape), part(x.shape);
  for (int64_t i = 0; i < x.size(); ++i) {
    bool inside = x.data[i] >= lo && x.data[i] <= hi;
    out.data[i] = std::clamp(x.data[i], lo, hi);
    part.data[i] = inside ? T(1) : T(0);
  }
  return unary_op("clamp", a, std::move(out), std::move(part));
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  const Array<T>& x = a.value();
  Array<T> out(x.shape), part(x.shape, c);
  for (int64_t i = 0; i < x.size(); ++i) out.data[i] = c * x.data[i];
  return unary_op("scale", a, std::move(out), std::move(part));
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  const Array<T>& x = a.value();
  Array<T> out(x.shape), part(x.shape);
  for (int64_t i = 0; i < x.size(); ++i) {
    out.data[i] = detail::gelu_value(x.data[i]);
    part.data[i] = detail::gelu_partial(x.data[i]);
  }
  return unary_op("gelu", a, std::move(out), std::move(part));
}

// ---------------------------------------------------------------------------
// elementwise binary (equal shapes, or scalar broadcast on either side)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_binary_shapes(const char* name, const Tensor<T>& a, const Tensor<T>& b) {
  check_same_tape(a, b);
  if (a.numel() == 1 || b.numel() == 1) return;
  require(a.shape() == b.shape(), std::string(name) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// accumulate gout*partial into a parent, reducing to a scalar if needed
template <typename T, typename PartialF>
void accum_binary(Tape<T>& tp, int parent, const Shape& parent_shape, int64_t parent_n,
                  const Array<T>& gout, PartialF partial) {
  if (!tp.requires_grad(parent)) return;
  if (parent_n == 1 && gout.size() > 1) {
    T acc = T(0);
    for (int64_t i = 0; i < gout.size(); ++i) acc += gout.data[i] * partial(i);
    tp.accum(parent, Array<T>(parent_shape, std::vector<T>{acc}));
  } else {
    Array<T> g(parent_shape);
    for (int64_t i = 0; i < gout.size(); ++i) g.data[i] = gout.data[i] * partial(i);
    tp.accum(parent, g);
  }
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_binary_shapes("add", a, b);
  const Array<T>& A = a.value();
  const Array<T>& B = b.value();
  bool as = A.size() == 1 && B.size() != 1, bs = B.size() == 1;
  Array<T> out(as ? B.shape : A.shape);
  for (int64_t i = 0; i < out.size(); ++i)
    out.data[i] = A.data[as ? 0 : i] + B.data[bs ? 0 : i];
  Tape<T>& tp = a.tape();
  int pa = a.id(), pb = b.id();
  Shape sa = A.shape, sb = B.shape;
  int64_t na = A.size(), nb = B.size();
  return tp.emit("add", std::move(out), {pa, pb},
                 [=](Tape<T>& t, const Array<T>& g) {
                   detail::accum_binary(t, pa, sa, na, g, [](int64_t) { return T(1); });
                   detail::accum_binary(t, pb, sb, nb, g, [](int64_t) { return T(1); });
                 });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_binary_shapes("sub", a, b);
  const Array<T>& A = a.value();
  const Array<T>& B = b.value();
  bool as = A.size() == 1 && B.size() != 1, bs = B.size() == 1;
  Array<T> out(as ? B.shape : A.shape);
  for (int64_t i = 0; i < out.size(); ++i)
    out.data[i] = A.data[as ? 0 : i] - B.data[bs ? 0 : i];
  Tape<T>& tp = a.tape();
  int pa = a.id(), pb = b.id();
  Shape sa = A.shape, sb = B.shape;
  int64_t na = A.size(), nb = B.size();
  return tp.emit("sub", std::move(out), {pa, pb},
                 [=](Tape<T>& t, const Array<T>& g) {
                   detail::accum_binary(t, pa, sa, na, g, [](int64_t) { return T(1); });
                   detail::accum_binary(t, pb, sb, nb, g, [](int64_t) { return T(-1); });
                 });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_binary_shapes("mul", a, b);
  const Array<T>& A = a.value();
  const Array<T>& B = b.value();
  bool as = A.size() == 1 && B.size() != 1, bs = B.size() == 1;
  Array<T> out(as ? B.shape : A.shape);
  for (int64_t i = 0; i < out.size(); ++i)
    out.data[i] = A.data[as ? 0 : i] * B.data[bs ? 0 : i];
  Tape<T>& tp = a.tape();
  int pa = a.id(), pb = b.id();
  Shape sa = A.shape, sb = B.shape;
  int64_t na = A.size(), nb = B.size();
  return tp.emit("mul", std::move(out), {pa, pb},
                 [=](Tape<T>& t, const Array<T>& g) {
                   const Array<T>& av = t.value(pa);
                   const Array<T>& bv = t.value(pb);
                   detail::accum_binary(t, pa, sa, na, g,
                                        [&](int64_t i) { return bv.data[nb == 1 ? 0 : i]; });
                   detail::accum_binary(t, pb, sb, nb, g,
                                        [&](int64_t i) { return av.data[na == 1 ? 0 : i]; });
                 });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_binary_shapes("div", a, b);
  const Array<T>& A = a.value();
  const Array<T>& B = b.value();
  if (a.tape().strict())
    for (const T& v : B.data)
      if (v == T(0)) fail("div: zero denominator");
  bool as = A.size() == 1 && B.size() != 1, bs = B.size() == 1;
  Array<T> out(as ? B.shape : A.shape);
  for (int64_t i = 0; i < out.size(); ++i)
    out.data[i] = A.data[as ? 0 : i] / B.data[bs ? 0 : i];
  Tape<T>& tp = a.tape();
  int pa = a.id(), pb = b.id();
  Shape sa = A.shape, sb = B.shape;
  int64_t na = A.size(), nb = B.size();
  return tp.emit("div", std::move(out), {pa, pb},
                 [=](Tape<T>& t, const Array<T>& g) {
                   const Array<T>& av = t.value(pa);
                   const Array<T>& bv = t.value(pb);
                   detail::accum_binary(t, pa, sa, na, g, [&](int64_t i) {
                     return T(1) / bv.data[nb == 1 ? 0 : i];
                   });
                   detail::accum_binary(t, pb, sb, nb, g, [&](int64_t i) {
                     T bi = bv.data[nb == 1 ? 0 : i];
                     return -av.data[na == 1 ? 0 : i] / (bi * bi);
                   });
                 });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, T c) {
  return add(a, a.tape().scalar_const(c));
}
template <typename T>
Tensor<T> sub(T c, const Tensor<T>& a) {
  return sub(a.tape().scalar_const(c), a);
}

// Dispatcher over the elementwise kinds; named functions above are the
// primary API, this exists so suites can enumerate ops uniformly.
enum class EwKind {
  add, sub, mul, div, neg, square, sqrt, exp, log, sin, cos, arccos, clamp, scale, gelu
};

template <typename T>
Tensor<T> elementwise(EwKind k, const Tensor<T>& a, const Tensor<T>* b = nullptr,
                      T p0 = T(0), T p1 = T(0)) {
  switch (k) {
    case EwKind::add: require(b, "elementwise: add needs rhs"); return add(a, *b);
    case EwKind::sub: require(b, "elementwise: sub needs rhs"); return sub(a, *b);
    case EwKind::mul: require(b, "elementwise: mul needs rhs"); return mul(a, *b);
    case EwKind::div: require(b, "elementwise: div needs rhs"); return div(a, *b);
    case EwKind::neg: return neg(a);
    case EwKind::square: return square(a);
    case EwKind::sqrt: return sqrt(a);
    case EwKind::exp: return exp(a);
    case EwKind::log: return log(a);
    case EwKind::sin: return sin(a);
    case EwKind::cos: return cos(a);
    case EwKind::arccos: return arccos(a);
    case EwKind::clamp: return clamp(a, p0, p1);
    case EwKind::scale: return scale(a, p0);
    case EwKind::gelu: return gelu(a);
  }
  fail("elementwise: unknown kind");
}

// ---------------------------------------------------------------------------
// reductions / broadcast
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  const Array<T>& x = a.value();
  T acc = T(0);
  for (const T& v : x.data) acc += v;
  Tape<T>& tp = a.tape();
  int pa = a.id();
  Shape sa = x.shape;
  return tp.emit("sum_all", Array<T>({1}, std::vector<T>{acc}), {pa},
                 [=](Tape<T>& t, const Array<T>& g) {
                   t.accum(pa, Array<T>(sa, g.data[0]));
                 });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return scale(sum_all(a), static_cast<T>(1.0 / static_cast<double>(a.numel())));
}

// max over all elements; subgradient routes to the first argmax
template <typename T>
Tensor<T> max_all(const Tensor<T>& a) {
  const Array<T>& x = a.value();
  int64_t arg = 0;
  for (int64_t i = 1; i < x.size(); ++i)
    if (x.data[i] > x.data[arg]) arg = i;
  Tape<T>& tp = a.tape();
  int pa = a.id();
  Shape sa = x.shape;
  return tp.emit("max_all", Array<T>({1}, std::vector<T>{x.data[arg]}), {pa},
                 [pa, sa, arg](Tape<T>& t, const Array<T>& g) {
                   Array<T> da(sa);
                   da.data[arg] = g.data[0];
                   t.accum(pa, da);
                 });
}

// H x W x C -> H x W x 1, sum over the channel axis
template <typename T>
Tensor<T> channel_sum(const Tensor<T>& a) {
  const Array<T>& x = a.value();
  require(x.rank() == 3, "channel_sum: want rank-3");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Array<T> out({h, w, 1});
  for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p) {
    T acc = T(0);
    for (int ch = 0; ch < c; ++ch) acc += x.data[p * c + ch];
    out.data[p] = acc;
  }
  Tape<T>& tp = a.tape();
  int pa = a.id();
  return tp.emit("channel_sum", std::move(out), {pa},
                 [pa, h, w, c](Tape<T>& t, const Array<T>& g) {
                   Array<T> da({h, w, c});
                   for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p)
                     for (int ch = 0; ch < c; ++ch) da.data[p * c + ch] = g.data[p];
                   t.accum(pa, da);
                 });
}

// H x W x 1 -> H x W x C
template <typename T>
Tensor<T> broadcast_channel(const Tensor<T>& a, int channels) {
  const Array<T>& x = a.value();
  require(x.rank() == 3 && x.dim(2) == 1, "broadcast_channel: want H x W x 1");
  const int h = x.dim(0), w = x.dim(1);
  Array<T> out({h, w, channels});
  for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p)
    for (int ch = 0; ch < channels; ++ch) out.data[p * channels + ch] = x.data[p];
  Tape<T>& tp = a.tape();
  int pa = a.id();
  return tp.emit("broadcast_channel", std::move(out), {pa},
                 [pa, h, w, channels](Tape<T>& t, const Array<T>& g) {
                   Array<T> da({h, w, 1});
                   for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p) {
                     T acc = T(0);
                     for (int ch = 0; ch < channels; ++ch) acc += g.data[p * channels + ch];
                     da.data[p] = acc;
                   }
                   t.accum(pa, da);
                 });
}

// H x W x C -> C (spatial mean)
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& a) {
  const Array<T>& x = a.value();
  require(x.rank() == 3, "global_avg_pool: want rank-3");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const T inv = static_cast<T>(1.0 / (static_cast<double>(h) * w));
  Array<T> out({c});
  for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p)
    for (int ch = 0; ch < c; ++ch) out.data[ch] += x.data[p * c + ch];
  for (int ch = 0; ch < c; ++ch) out.data[ch] *= inv;
  Tape<T>& tp = a.tape();
  int pa = a.id();
  return tp.emit("global_avg_pool", std::move(out), {pa},
                 [pa, h, w, c, inv](Tape<T>& t, const Array<T>& g) {
                   Array<T> da({h, w, c});
                   for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p)
                     for (int ch = 0; ch < c; ++ch) da.data[p * c + ch] = g.data[ch] * inv;
                   t.accum(pa, da);
                 });
}

// 2x2 average pooling, dims must be even
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& a) {
  const Array<T>& x = a.value();
  require(x.rank() == 3, "avg_pool2: want rank-3");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  require(h % 2 == 0 && w % 2 == 0, "avg_pool2: odd spatial dims");
  Array<T> out({h / 2, w / 2, c});
  for (int y = 0; y < h / 2; ++y)
    for (int xx = 0; xx < w / 2; ++xx)
      for (int ch = 0; ch < c; ++ch)
        out.at(y, xx, ch) = static_cast<T>(0.25) *
                            (x.at(2 * y, 2 * xx, ch) + x.at(2 * y, 2 * xx + 1, ch) +
                             x.at(2 * y + 1, 2 * xx, ch) + x.at(2 * y + 1, 2 * xx + 1, ch));
  Tape<T>& tp = a.tape();
  int pa = a.id();
  return tp.emit("avg_pool2", std::move(out), {pa},
                 [pa, h, w, c](Tape<T>& t, const Array<T>& g) {
                   Array<T> da({h, w, c});
                   for (int y = 0; y < h / 2; ++y)
                     for (int xx = 0; xx < w / 2; ++xx)
                       for (int ch = 0; ch < c; ++ch) {
                         T q = g.data[(static_cast<int64_t>(y) * (w / 2) + xx) * c + ch] *
                               static_cast<T>(0.25);
                         da.at(2 * y, 2 * xx, ch) = q;
                         da.at(2 * y, 2 * xx + 1, ch) = q;
                         da.at(2 * y + 1, 2 * xx, ch) = q;
                         da.at(2 * y + 1, 2 * xx + 1, ch) = q;
                       }
                   t.accum(pa, da);
                 });
}

// ---------------------------------------------------------------------------
// structural
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
  const Array<T>& x = a.value();
  require(shape_numel(new_shape) == x.size(), "reshape: numel mismatch");
  Array<T> out(new_shape, x.data);
  Tape<T>& tp = a.tape();
  int pa = a.id();
  Shape sa = x.shape;
  return tp.emit("reshape", std::move(out), {pa},
                 [pa, sa](Tape<T>& t, const Array<T>& g) {
                   t.accum(pa, Array<T>(sa, g.data));
                 });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  const Array<T>& x = a.value();
  require(x.rank() == 2, "transpose2d: want rank-2");
  const int m = x.dim(0), n = x.dim(1);
  Array<T> out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = x.at(i, j);
  Tape<T>& tp = a.tape();
  int pa = a.id();
  return tp.emit("transpose2d", std::move(out), {pa},
                 [pa, m, n](Tape<T>& t, const Array<T>& g) {
                   Array<T> da({m, n});
                   for (int j = 0; j < n; ++j)
                     for (int i = 0; i < m; ++i) da.at(i, j) = g.at(j, i);
                   t.accum(pa, da);
                 });
}

// slice [c0, c1) along the last axis, any rank
template <typename T>
Tensor<T> slice_lastdim(const Tensor<T>& a, int c0, int c1) {
  const Array<T>& x = a.value();
  const int last = x.shape.back();
  require(0 <= c0 && c0 < c1 && c1 <= last, "slice_lastdim: bad range");
  const int64_t outer = x.size() / last;
  const int width = c1 - c0;
  Shape os = x.shape;
  os.back() = width;
  Array<T> out(os);
  for (int64_t o = 0; o < outer; ++o)
    for (int j = 0; j < width; ++j) out.data[o * width + j] = x.data[o * last + c0 + j];
  Tape<T>& tp = a.tape();
  int pa = a.id();
  Shape sa = x.shape;
  return tp.emit("slice_lastdim", std::move(out), {pa},
                 [pa, sa, c0, width, last, outer](Tape<T>& t, const Array<T>& g) {
                   Array<T> da(sa);
                   for (int64_t o = 0; o < outer; ++o)
                     for (int j = 0; j < width; ++j)
                       da.data[o * last + c0 + j] = g.data[o * width + j];
                   t.accum(pa, da);
                 });
}

template <typename T>
Tensor<T> concat_lastdim(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_tape(a, b);
  const Array<T>& A = a.value();
  const Array<T>& B = b.value();
  require(A.rank() == B.rank(), "concat_lastdim: rank mismatch");
  for (int i = 0; i + 1 < A.rank(); ++i)
    require(A.dim(i) == B.dim(i), "concat_lastdim: leading dims differ");
  const int la = A.shape.back(), lb = B.shape.back();
  const int64_t outer = A.size() / la;
  Shape os = A.shape;
  os.back() = la + lb;
  Array<T> out(os);
  for (int64_t o = 0; o < outer; ++o) {
    for (int j = 0; j < la; ++j) out.data[o * (la + lb) + j] = A.data[o * la + j];
    for (int j = 0; j < lb; ++j) out.data[o * (la + lb) + la + j] = B.data[o * lb + j];
  }
  Tape<T>& tp = a.tape();
  int pa = a.id(), pb = b.id();
  Shape sa = A.shape, sb = B.shape;
  return tp.emit("concat_lastdim", std::move(out), {pa, pb},
                 [=](Tape<T>& t, const Array<T>& g) {
                   Array<T> da(sa), db(sb);
                   for (int64_t o = 0; o < outer; ++o) {
                     for (int j = 0; j < la; ++j) da.data[o * la + j] = g.data[o * (la + lb) + j];
                     for (int j = 0; j < lb; ++j)
                       db.data[o * lb + j] = g.data[o * (la + lb) + la + j];
                   }
                   t.accum(pa, da);
                   t.accum(pb, db);
                 });
}

// ---------------------------------------------------------------------------
// dense linear algebra (rank-2)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
Array<T> matmul_value(const Array<T>& A, const Array<T>& B) {
  const int m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Array<T> out({m, n});
#ifdef _OPENMP
#pragma omp parallel for if (static_cast<int64_t>(m) * k * n > 65536)
#endif
  for (int i = 0; i < m; ++i)
    for (int kk = 0; kk < k; ++kk) {
      T aik = A.at(i, kk);
      const T* brow = &B.data[static_cast<int64_t>(kk) * n];
      T* orow = &out.data[static_cast<int64_t>(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  return out;
}

template <typename T>
Array<T> matmul_nt(const Array<T>& A, const Array<T>& B) {  // A * B^T
  const int m = A.dim(0), k = A.dim(1), n = B.dim(0);
  Array<T> out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      T acc = T(0);
      const T* ar = &A.data[static_cast<int64_t>(i) * k];
      const T* br = &B.data[static_cast<int64_t>(j) * k];
      for (int kk = 0; kk < k; ++kk) acc += ar[kk] * br[kk];
      out.at(i, j) = acc;
    }
  return out;
}

template <typename T>
Array<T> matmul_tn(const Array<T>& A, const Array<T>& B) {  // A^T * B
  const int k = A.dim(0), m = A.dim(1), n = B.dim(1);
  Array<T> out({m, n});
  for (int kk = 0; kk < k; ++kk) {
    const T* ar = &A.data[static_cast<int64_t>(kk) * m];
    const T* br = &B.data[static_cast<int64_t>(kk) * n];
    for (int i = 0; i < m; ++i) {
      T aik = ar[i];
      T* orow = &out.data[static_cast<int64_t>(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += aik * br[j];
    }
  }
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_tape(a, b);
  const Array<T>& A = a.value();
  const Array<T>& B = b.value();
  require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(0), "matmul: bad shapes");
  Tape<T>& tp = a.tape();
  int pa = a.id(), pb = b.id();
  return tp.emit("matmul", detail::matmul_value(A, B), {pa, pb},
                 [pa, pb](Tape<T>& t, const Array<T>& g) {
                   t.accum(pa, detail::matmul_nt(g, t.value(pb)));
                   t.accum(pb, detail::matmul_tn(t.value(pa), g));
                 });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  const Array<T>& x = a.value();
  require(x.rank() == 2, "softmax_rows: want rank-2");
  const int m = x.dim(0), n = x.dim(1);
  Array<T> out({m, n});
  for (int i = 0; i < m; ++i) {
    const T* xr = &x.data[static_cast<int64_t>(i) * n];
    T* yr = &out.data[static_cast<int64_t>(i) * n];
    T mx = xr[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    T s = T(0);
    for (int j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    for (int j = 0; j < n; ++j) yr[j] /= s;
  }
  Tape<T>& tp = a.tape();
  int pa = a.id();
  Array<T> y = out;
  return tp.emit("softmax_rows", std::move(out), {pa},
                 [pa, y = std::move(y), m, n](Tape<T>& t, const Array<T>& g) {
                   Array<T> da({m, n});
                   for (int i = 0; i < m; ++i) {
                     const T* yr = &y.data[static_cast<int64_t>(i) * n];
                     const T* gr = &g.data[static_cast<int64_t>(i) * n];
                     T dot = T(0);
                     for (int j = 0; j < n; ++j) dot += yr[j] * gr[j];
                     T* dr = &da.data[static_cast<int64_t>(i) * n];
                     for (int j = 0; j < n; ++j) dr[j] = yr[j] * (gr[j] - dot);
                   }
                   t.accum(pa, da);
                 });
}

// rows scaled to unit L2 norm; smooth epsilon keeps the zero row defined
template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& a, T eps = static_cast<T>(1e-12)) {
  const Array<T>& x = a.value();
  require(x.rank() == 2, "l2_normalize_rows: want rank-2");
  const int m = x.dim(0), n = x.dim(1);
  Array<T> out({m, n});
  std::vector<T> norms(m);
  for (int i = 0; i < m; ++i) {
    const T* xr = &x.data[static_cast<int64_t>(i) * n];
    T ss = T(0);
    for (int j = 0; j < n; ++j) ss += xr[j] * xr[j];
    norms[i] = std::sqrt(ss + eps);
    T* yr = &out.data[static_cast<int64_t>(i) * n];
    for (int j = 0; j < n; ++j) yr[j] = xr[j] / norms[i];
  }
  Tape<T>& tp = a.tape();
  int pa = a.id();
  return tp.emit("l2_normalize_rows", std::move(out), {pa},
                 [pa, norms = std::move(norms), m, n](Tape<T>& t, const Array<T>& g) {
                   const Array<T>& xv = t.value(pa);
                   Array<T> da({m, n});
                   for (int i = 0; i < m; ++i) {
                     const T* xr = &xv.data[static_cast<int64_t>(i) * n];
                     const T* gr = &g.data[static_cast<int64_t>(i) * n];
                     T dot = T(0);
                     for (int j = 0; j < n; ++j) dot += xr[j] * gr[j];
                     T inv = T(1) / norms[i];
                     T inv3 = inv * inv * inv;
                     T* dr = &da.data[static_cast<int64_t>(i) * n];
                     for (int j = 0; j < n; ++j) dr[j] = gr[j] * inv - xr[j] * dot * inv3;
                   }
                   t.accum(pa, da);
                 });
}

// ---------------------------------------------------------------------------
// convolution ("same" zero padding) and channel layer norm
// ---------------------------------------------------------------------------

enum class ConvKind { k3x3, k1x1, depthwise3x3 };

namespace detail {

template <typename T>
Array<T> conv_forward(const Array<T>& x, const Array<T>& k, ConvKind kind, const Array<T>* bias) {
  const int h = x.dim(0), w = x.dim(1), ci = x.dim(2);
  const int co = kind == ConvKind::depthwise3x3 ? ci : k.dim(3);
  Array<T> out({h, w, co});
#ifdef _OPENMP
#pragma omp parallel for if (static_cast<int64_t>(h) * w * ci * co > 16384)
#endif
  for (int y = 0; y < h; ++y) {
    std::vector<T> acc(co);
    for (int xx = 0; xx < w; ++xx) {
      std::fill(acc.begin(), acc.end(), T(0));
      if (kind == ConvKind::k1x1) {
        const T* xp = &x.at(y, xx, 0);
        for (int c = 0; c < ci; ++c) {
          T xv = xp[c];
          const T* kr = &k.data[static_cast<int64_t>(c) * co];
          for (int o = 0; o < co; ++o) acc[o] += xv * kr[o];
        }
      } else if (kind == ConvKind::k3x3) {
        for (int ky = 0; ky < 3; ++ky) {
          int iy = y + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            int ix = xx + kx - 1;
            if (ix < 0 || ix >= w) continue;
            const T* xp = &x.at(iy, ix, 0);
            const T* kp = &k.data[(static_cast<int64_t>(ky) * 3 + kx) * ci * co];
            for (int c = 0; c < ci; ++c) {
              T xv = xp[c];
              const T* kr = kp + static_cast<int64_t>(c) * co;
              for (int o = 0; o < co; ++o) acc[o] += xv * kr[o];
            }
          }
        }
      } else {  // depthwise3x3
        for (int ky = 0; ky < 3; ++ky) {
          int iy = y + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            int ix = xx + kx - 1;
            if (ix < 0 || ix >= w) continue;
            const T* xp = &x.at(iy, ix, 0);
            const T* kp = &k.data[(static_cast<int64_t>(ky) * 3 + kx) * ci];
            for (int c = 0; c < ci; ++c) acc[c] += xp[c] * kp[c];
          }
        }
      }
      T* op = &out.at(y, xx, 0);
      if (bias)
        for (int o = 0; o < co; ++o) op[o] = acc[o] + bias->data[o];
      else
        for (int o = 0; o < co; ++o) op[o] = acc[o];
    }
  }
  return out;
}

// gradient wrt input: gather form, race-free under row parallelism
template <typename T>
Array<T> conv_backward_input(const Array<T>& g, const Array<T>& k, ConvKind kind, int h, int w,
                             int ci) {
  Array<T> dx({h, w, ci});
  const int co = kind == ConvKind::depthwise3x3 ? ci : k.dim(3);
#ifdef _OPENMP
#pragma omp parallel for if (static_cast<int64_t>(h) * w * ci * co > 16384)
#endif
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx) {
      T* dp = &dx.at(y, xx, 0);
      if (kind == ConvKind::k1x1) {
        const T* gp = &g.at(y, xx, 0);
        for (int c = 0; c < ci; ++c) {
          T acc = T(0);
          const T* kr = &k.data[static_cast<int64_t>(c) * co];
          for (int o = 0; o < co; ++o) acc += kr[o] * gp[o];
          dp[c] = acc;
        }
      } else if (kind == ConvKind::k3x3) {
        for (int ky = 0; ky < 3; ++ky) {
          int oy = y + 1 - ky;
          if (oy < 0 || oy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            int ox = xx + 1 - kx;
            if (ox < 0 || ox >= w) continue;
            const T* gp = &g.at(oy, ox, 0);
            const T* kp = &k.data[(static_cast<int64_t>(ky) * 3 + kx) * ci * co];
            for (int c = 0; c < ci; ++c) {
              T acc = T(0);
              const T* kr = kp + static_cast<int64_t>(c) * co;
              for (int o = 0; o < co; ++o) acc += kr[o] * gp[o];
              dp[c] += acc;
            }
          }
        }
      } else {
        for (int ky = 0; ky < 3; ++ky) {
          int oy = y + 1 - ky;
          if (oy < 0 || oy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            int ox = xx + 1 - kx;
            if (ox < 0 || ox >= w) continue;
            const T* gp = &g.at(oy, ox, 0);
            const T* kp = &k.data[(static_cast<int64_t>(ky) * 3 + kx) * ci];
            for (int c = 0; c < ci; ++c) dp[c] += kp[c] * gp[c];
          }
        }
      }
    }
  return dx;
}

template <typename T>
Array<T> conv_backward_kernel(const Array<T>& g, const Array<T>& x, ConvKind kind,
                              const Shape& kshape) {
  Array<T> dk(kshape);
  const int h = x.dim(0), w = x.dim(1), ci = x.dim(2);
  if (kind == ConvKind::k1x1) {
    const int co = kshape[3];
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        const T* xp = &x.at(y, xx, 0);
        const T* gp = &g.at(y, xx, 0);
        for (int c = 0; c < ci; ++c) {
          T xv = xp[c];
          T* dr = &dk.data[static_cast<int64_t>(c) * co];
          for (int o = 0; o < co; ++o) dr[o] += xv * gp[o];
        }
      }
    return dk;
  }
  const bool dw = kind == ConvKind::depthwise3x3;
  const int co = dw ? ci : kshape[3];
#ifdef _OPENMP
#pragma omp parallel for collapse(2) if (static_cast<int64_t>(h) * w * ci * co > 16384)
#endif
  for (int ky = 0; ky < 3; ++ky)
    for (int kx = 0; kx < 3; ++kx) {
      for (int y = 0; y < h; ++y) {
        int iy = y + ky - 1;
        if (iy < 0 || iy >= h) continue;
        for (int xx = 0; xx < w; ++xx) {
          int ix = xx + kx - 1;
          if (ix < 0 || ix >= w) continue;
          const T* xp = &x.at(iy, ix, 0);
          const T* gp = &g.at(y, xx, 0);
          if (dw) {
            T* dr = &dk.data[(static_cast<int64_t>(ky) * 3 + kx) * ci];
            for (int c = 0; c < ci; ++c) dr[c] += xp[c] * gp[c];
          } else {
            T* dp = &dk.data[(static_cast<int64_t>(ky) * 3 + kx) * ci * co];
            for (int c = 0; c < ci; ++c) {
              T xv = xp[c];
              T* dr = dp + static_cast<int64_t>(c) * co;
              for (int o = 0; o < co; ++o) dr[o] += xv * gp[o];
            }
          }
        }
      }
    }
  return dk;
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, ConvKind kind,
                 const Tensor<T>* bias = nullptr) {
  detail::check_same_tape(x, kernel);
  const Array<T>& xv = x.value();
  const Array<T>& kv = kernel.value();
  require(xv.rank() == 3, "conv2d: input must be H x W x C");
  switch (kind) {
    case ConvKind::k3x3:
      require(kv.rank() == 4 && kv.dim(0) == 3 && kv.dim(1) == 3 && kv.dim(2) == xv.dim(2),
              "conv2d: kernel/channel mismatch for k3x3");
      break;
    case ConvKind::k1x1:
      require(kv.rank() == 4 && kv.dim(0) == 1 && kv.dim(1) == 1 && kv.dim(2) == xv.dim(2),
              "conv2d: kernel/channel mismatch for k1x1");
      break;
    case ConvKind::depthwise3x3:
      require(kv.rank() == 3 && kv.dim(0) == 3 && kv.dim(1) == 3 && kv.dim(2) == xv.dim(2),
              "conv2d: kernel/channel mismatch for depthwise3x3");
      break;
  }
  const Array<T>* bv = nullptr;
  std::vector<int> parents{x.id(), kernel.id()};
  if (bias) {
    detail::check_same_tape(x, *bias);
    bv = &bias->value();
    int co = kind == ConvKind::depthwise3x3 ? xv.dim(2) : kv.dim(3);
    require(bv->rank() == 1 && bv->dim(0) == co, "conv2d: bias length mismatch");
    parents.push_back(bias->id());
  }
  Tape<T>& tp = x.tape();
  int px = x.id(), pk = kernel.id();
  int pb = bias ? bias->id() : -1;
  const int h = xv.dim(0), w = xv.dim(1), ci = xv.dim(2);
  Shape kshape = kv.shape;
  return tp.emit("conv2d", detail::conv_forward(xv, kv, kind, bv), std::move(parents),
                 [=](Tape<T>& t, const Array<T>& g) {
                   if (t.requires_grad(px))
                     t.accum(px, detail::conv_backward_input(g, t.value(pk), kind, h, w, ci));
                   if (t.requires_grad(pk))
                     t.accum(pk, detail::conv_backward_kernel(g, t.value(px), kind, kshape));
                   if (pb >= 0 && t.requires_grad(pb)) {
                     const int co = g.dim(2);
                     Array<T> db({co});
                     for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p)
                       for (int o = 0; o < co; ++o) db.data[o] += g.data[p * co + o];
                     t.accum(pb, db);
                   }
                 });
}

// per-pixel channel normalization with learned affine
template <typename T>
Tensor<T> layer_norm_channels(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                              T eps = static_cast<T>(1e-6)) {
  detail::check_same_tape(x, gain);
  detail::check_same_tape(x, bias);
  require(eps > T(0), "layer_norm_channels: eps must be positive");
  const Array<T>& xv = x.value();
  require(xv.rank() == 3, "layer_norm_channels: want rank-3");
  const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  require(gain.numel() == c && bias.numel() == c, "layer_norm_channels: affine length mismatch");
  const Array<T>& gv = gain.value();
  const Array<T>& bv = bias.value();

  const int64_t np = static_cast<int64_t>(h) * w;
  Array<T> out({h, w, c});
  std::vector<T> mean(np), inv_std(np);
  for (int64_t p = 0; p < np; ++p) {
    const T* xp = &xv.data[p * c];
    T mu = T(0);
    for (int ch = 0; ch < c; ++ch) mu += xp[ch];
    mu /= static_cast<T>(c);
    T var = T(0);
    for (int ch = 0; ch < c; ++ch) var += (xp[ch] - mu) * (xp[ch] - mu);
    var /= static_cast<T>(c);
    T inv = T(1) / std::sqrt(var + eps);
    mean[p] = mu;
    inv_std[p] = inv;
    T* op = &out.data[p * c];
    for (int ch = 0; ch < c; ++ch) op[ch] = gv.data[ch] * (xp[ch] - mu) * inv + bv.data[ch];
  }
  Tape<T>& tp = x.tape();
  int px = x.id(), pg = gain.id(), pb = bias.id();
  return tp.emit(
      "layer_norm_channels", std::move(out), {px, pg, pb},
      [px, pg, pb, h, w, c, np, mean = std::move(mean),
       inv_std = std::move(inv_std)](Tape<T>& t, const Array<T>& g) {
        const Array<T>& xv2 = t.value(px);
        const Array<T>& gv2 = t.value(pg);
        Array<T> dx({h, w, c});
        Array<T> dg({c}), db({c});
        for (int64_t p = 0; p < np; ++p) {
          const T* xp = &xv2.data[p * c];
          const T* gp = &g.data[p * c];
          T mu = mean[p], inv = inv_std[p];
          T sum_dxh = T(0), sum_dxh_xh = T(0);
          for (int ch = 0; ch < c; ++ch) {
            T xh = (xp[ch] - mu) * inv;
            T dxh = gp[ch] * gv2.data[ch];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh;
            dg.data[ch] += gp[ch] * xh;
            db.data[ch] += gp[ch];
          }
          T* dp = &dx.data[p * c];
          const T invc = T(1) / static_cast<T>(c);
          for (int ch = 0; ch < c; ++ch) {
            T xh = (xp[ch] - mu) * inv;
            T dxh = gp[ch] * gv2.data[ch];
            dp[ch] = inv * (dxh - invc * sum_dxh - invc * xh * sum_dxh_xh);
          }
        }
        t.accum(px, dx);
        t.accum(pg, dg);
        t.accum(pb, db);
      });
}

// differentiable bicubic resize; backward applies the transpose operator
template <typename T>
Tensor<T> bicubic_resize_op(const Tensor<T>& x, int out_h, int out_w) {
  const Array<T>& xv = x.value();
  require(xv.rank() == 3, "bicubic_resize_op: want rank-3");
  const int h = xv.dim(0), w = xv.dim(1);
  Tape<T>& tp = x.tape();
  int px = x.id();
  return tp.emit("bicubic_resize", bicubic_resize(xv, out_h, out_w), {px},
                 [px, h, w](Tape<T>& t, const Array<T>& g) {
                   t.accum(px, bicubic_resize_adjoint(g, h, w));
                 });
}

}  // namespace ssdn
