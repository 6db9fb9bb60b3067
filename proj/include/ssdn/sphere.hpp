#pragma once

#include <cmath>

#include "ssdn/ops.hpp"

namespace ssdn {

enum class SphereVariant { tangent_lift, verbatim };
enum class Reduction { mean, sum };

// Geometry of the radius-r hypersphere around the north pole (0,...,0,r).
// tangent_lift treats inputs as tangent vectors at the pole and lands
// exactly on the sphere; verbatim appends the radius as an extra coordinate
// before the geodesic formula, which generically leaves the sphere.
struct SphereConfig {
  double radius = 1.0;
  SphereVariant variant = SphereVariant::tangent_lift;
  Reduction reduction = Reduction::mean;
  bool strict = true;
  bool prescale = true;

  void validate() const { require(radius > 0, "SphereConfig: radius must be positive"); }
};

namespace sphdetail {

// sin(x)/x with a series for small angles
inline double sinc(double x) {
  if (std::abs(x) < 1e-3) return 1.0 - x * x / 6.0;
  return std::sin(x) / x;
}

// d/dx sinc(x) divided by x; smooth through 0
inline double sinc_prime_over_x(double x) {
  if (std::abs(x) < 1e-3) return -1.0 / 3.0 + x * x / 30.0;
  return (x * std::cos(x) - std::sin(x)) / (x * x * x);
}

// psi / sin(psi)
inline double stretch(double psi) {
  if (std::abs(psi) < 1e-3) return 1.0 + psi * psi / 6.0;
  return psi / std::sin(psi);
}

// d/dpsi stretch(psi) divided by sin(psi)
inline double stretch_prime_over_sin(double psi) {
  if (std::abs(psi) < 1e-3) return 1.0 / 3.0 + 2.0 * psi * psi / 15.0;
  double s = std::sin(psi);
  return (s - psi * std::cos(psi)) / (s * s * s);
}

template <typename T>
double pixel_norm_cast(const T* v, int d) {
  double ss = 0;
  for (int i = 0; i < d; ++i) ss += static_cast<double>(v[i]) * v[i];
  return std::sqrt(ss);
}

template <typename T>
void exp_pixel(const T* v, int d, const SphereConfig& cfg, T* out) {
  const double r = cfg.radius;
  double t = 0;
  for (int i = 0; i < d; ++i) t += static_cast<double>(v[i]) * v[i];
  t = std::sqrt(t);
  if (cfg.variant == SphereVariant::tangent_lift) {
    if (cfg.strict && t >= M_PI * r)
      fail("exp_map: tangent vector reaches the cut locus (norm >= pi*r)");
    double theta = t / r;
    double s = sinc(theta);
    for (int i = 0; i < d; ++i) out[i] = static_cast<T>(v[i] * s);
    out[d] = static_cast<T>(r * std::cos(theta));
  } else {
    double theta = std::sqrt(t * t + r * r) / r;
    double q = sinc(theta);
    for (int i = 0; i < d; ++i) out[i] = static_cast<T>(v[i] * q);
    out[d] = static_cast<T>(r * std::cos(theta) + r * q);
  }
}

template <typename T>
void log_pixel(const T* x, int d_out, const SphereConfig& cfg, T* out) {
  const double r = cfg.radius;
  if (cfg.strict && cfg.variant == SphereVariant::tangent_lift) {
    double n = pixel_norm_cast(x, d_out + 1);
    if (std::abs(n - r) > 1e-5 * r) fail("log_map: input pixel is off the sphere");
  }
  double u = std::clamp(static_cast<double>(x[d_out]) / r, -1.0, 1.0);
  double psi = std::acos(u);
  if (psi > M_PI - 1e-6) {
    if (cfg.strict && cfg.variant == SphereVariant::tangent_lift)
      fail("log_map: antipodal input (cut locus)");
    psi = M_PI - 1e-6;
  }
  double s = stretch(psi);
  for (int i = 0; i < d_out; ++i) out[i] = static_cast<T>(x[i] * s);
}

// largest admissible tangent norm before the uniform pre-scaling kicks in
inline double prescale_cap(const SphereConfig& cfg) {
  if (cfg.variant == SphereVariant::tangent_lift) return 0.99 * M_PI * cfg.radius;
  // keep the lifted angle strictly short of pi so log stays finite
  return 0.99 * std::sqrt(M_PI * M_PI - 1.0) * cfg.radius;
}

}  // namespace sphdetail

// Uniform shrink factor keeping every pixel short of the cut locus;
// applied as a constant (not differentiated through).
template <typename T>
T exp_prescale_factor(const Array<T>& phi, const SphereConfig& cfg) {
  require(phi.rank() == 3, "exp_prescale_factor: want rank-3");
  const int d = phi.dim(2);
  double max_t = 0;
  for (int64_t p = 0; p < phi.size() / d; ++p)
    max_t = std::max(max_t, sphdetail::pixel_norm_cast(&phi.data[p * d], d));
  double cap = sphdetail::prescale_cap(cfg);
  if (max_t <= cap) return T(1);
  return static_cast<T>(cap / max_t);
}

// Array-level maps (shared by the tape ops and plain evaluation).
template <typename T>
Array<T> exp_map_array(const Array<T>& phi, const SphereConfig& cfg) {
  cfg.validate();
  require(phi.rank() == 3, "exp_map: want rank-3 feature map");
  const int h = phi.dim(0), w = phi.dim(1), d = phi.dim(2);
  Array<T> out({h, w, d + 1});
  for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p)
    sphdetail::exp_pixel(&phi.data[p * d], d, cfg, &out.data[p * (d + 1)]);
  return out;
}

template <typename T>
Array<T> log_map_array(const Array<T>& x, const SphereConfig& cfg) {
  cfg.validate();
  require(x.rank() == 3 && x.dim(2) >= 2, "log_map: want rank-3 with >= 2 channels");
  const int h = x.dim(0), w = x.dim(1), d = x.dim(2) - 1;
  Array<T> out({h, w, d});
  for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p)
    sphdetail::log_pixel(&x.data[p * (d + 1)], d, cfg, &out.data[p * d]);
  return out;
}

// exp map as a tape op, without pre-scaling ("raw" Definition form)
template <typename T>
Tensor<T> exp_map_raw(const Tensor<T>& phi, const SphereConfig& cfg) {
  const Array<T>& xv = phi.value();
  Array<T> out = exp_map_array(xv, cfg);
  const int h = xv.dim(0), w = xv.dim(1), d = xv.dim(2);
  Tape<T>& tp = phi.tape();
  int px = phi.id();
  SphereConfig c = cfg;
  return tp.emit("exp_map", std::move(out), {px},
                 [px, h, w, d, c](Tape<T>& t, const Array<T>& g) {
                   const Array<T>& v = t.value(px);
                   const double r = c.radius;
                   Array<T> dv({h, w, d});
                   for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p) {
                     const T* vp = &v.data[p * d];
                     const T* gp = &g.data[p * (d + 1)];
                     T* dp = &dv.data[p * d];
                     double tn = sphdetail::pixel_norm_cast(vp, d);
                     double dot = 0;
                     for (int i = 0; i < d; ++i) dot += static_cast<double>(gp[i]) * vp[i];
                     if (c.variant == SphereVariant::tangent_lift) {
                       double theta = tn / r;
                       double s = sphdetail::sinc(theta);
                       double a = sphdetail::sinc_prime_over_x(theta) / (r * r);
                       double coef = dot * a - static_cast<double>(gp[d]) * s / r;
                       for (int i = 0; i < d; ++i)
                         dp[i] = static_cast<T>(gp[i] * s + coef * vp[i]);
                     } else {
                       double theta = std::sqrt(tn * tn + r * r) / r;
                       double q = sphdetail::sinc(theta);
                       double qp = (theta * std::cos(theta) - std::sin(theta)) / (theta * theta);
                       double dtheta_coef = 1.0 / (r * r * theta);
                       double coef = (dot * qp + static_cast<double>(gp[d]) * r *
                                                     (qp - std::sin(theta))) *
                                     dtheta_coef;
                       for (int i = 0; i < d; ++i)
                         dp[i] = static_cast<T>(gp[i] * q + coef * vp[i]);
                     }
                   }
                   t.accum(px, dv);
                 });
}

template <typename T>
struct ExpMapResult {
  Tensor<T> on_sphere;
  Tensor<T> factor;  // valid only when scaled
  bool scaled = false;
};

// exp map with the uniform cut-locus pre-scaling (the default entry point).
// The shrink factor is itself on the tape (through the max pixel norm), so
// gradients stay exact while the factor is active, and dividing the
// log-mapped values by the same factor reproduces the input identically.
template <typename T>
ExpMapResult<T> exp_map_scaled(const Tensor<T>& phi, const SphereConfig& cfg) {
  ExpMapResult<T> r;
  if (!cfg.prescale || exp_prescale_factor(phi.value(), cfg) == T(1)) {
    r.on_sphere = exp_map_raw(phi, cfg);
    return r;
  }
  const double cap = sphdetail::prescale_cap(cfg);
  auto max_norm = sqrt(max_all(channel_sum(square(phi))));
  r.factor = div(phi.tape().scalar_const(static_cast<T>(cap)), max_norm);
  r.on_sphere = exp_map_raw(mul(phi, r.factor), cfg);
  r.scaled = true;
  return r;
}

template <typename T>
Tensor<T> exp_map(const Tensor<T>& phi, const SphereConfig& cfg, T* scale_out = nullptr) {
  ExpMapResult<T> r = exp_map_scaled(phi, cfg);
  if (scale_out) *scale_out = r.scaled ? r.factor.scalar() : T(1);
  return r.on_sphere;
}

template <typename T>
Tensor<T> log_map(const Tensor<T>& x, const SphereConfig& cfg) {
  const Array<T>& xv = x.value();
  Array<T> out = log_map_array(xv, cfg);
  const int h = xv.dim(0), w = xv.dim(1), d = xv.dim(2) - 1;
  Tape<T>& tp = x.tape();
  int px = x.id();
  const double r = cfg.radius;
  return tp.emit("log_map", std::move(out), {px},
                 [px, h, w, d, r](Tape<T>& t, const Array<T>& g) {
                   const Array<T>& xv2 = t.value(px);
                   Array<T> dx({h, w, d + 1});
                   for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p) {
                     const T* xp = &xv2.data[p * (d + 1)];
                     const T* gp = &g.data[p * d];
                     T* dp = &dx.data[p * (d + 1)];
                     double u = static_cast<double>(xp[d]) / r;
                     bool clamped = u < -1.0 || u > 1.0;
                     u = std::clamp(u, -1.0, 1.0);
                     double psi = std::acos(u);
                     if (psi > M_PI - 1e-6) {
                       psi = M_PI - 1e-6;
                       clamped = true;
                     }
                     double s = sphdetail::stretch(psi);
                     double dot = 0;
                     for (int i = 0; i < d; ++i) dot += static_cast<double>(gp[i]) * xp[i];
                     for (int i = 0; i < d; ++i) dp[i] = static_cast<T>(gp[i] * s);
                     dp[d] = clamped ? T(0)
                                     : static_cast<T>(-dot *
                                                      sphdetail::stretch_prime_over_sin(psi) / r);
                   }
                   t.accum(px, dx);
                 });
}

namespace sphdetail {

template <typename T>
void check_on_sphere(const Array<T>& a, double r, const char* who) {
  const int d1 = a.dim(2);
  for (int64_t p = 0; p < a.size() / d1; ++p) {
    double n = pixel_norm_cast(&a.data[p * d1], d1);
    if (std::abs(n - r) > 1e-5 * r)
      fail(std::string(who) + ": off-sphere input pixel (norm " + std::to_string(n) + ")");
  }
}

// per-pixel renormalization to radius r (for verbatim-variant features)
template <typename T>
Tensor<T> renormalize(const Tensor<T>& a, double r) {
  const int d1 = a.shape()[2];
  auto n = sqrt(channel_sum(square(a)));
  return scale(div(a, broadcast_channel(n, d1)), static_cast<T>(r));
}

}  // namespace sphdetail

// Per-pixel spherical distance map (H x W x 1): the squared chord over
// 2r^2, which equals 1 - <a,b>/r^2 on the sphere and is exactly zero for
// identical inputs.
template <typename T>
Tensor<T> sphere_distance_map(const Tensor<T>& a, const Tensor<T>& b, const SphereConfig& cfg) {
  cfg.validate();
  require(a.shape() == b.shape(), "sphere_distance: shape mismatch");
  require(a.value().rank() == 3, "sphere_distance: want rank-3");
  Tensor<T> av = a, bv = b;
  if (cfg.variant == SphereVariant::verbatim) {
    av = sphdetail::renormalize(a, cfg.radius);
    bv = sphdetail::renormalize(b, cfg.radius);
  } else if (cfg.strict) {
    sphdetail::check_on_sphere(a.value(), cfg.radius, "sphere_distance");
    sphdetail::check_on_sphere(b.value(), cfg.radius, "sphere_distance");
  }
  double factor = 1.0 / (2.0 * cfg.radius * cfg.radius);
  return scale(channel_sum(square(sub(av, bv))), static_cast<T>(factor));
}

// Reduced spherical distance, mean (default) or sum over pixels.
template <typename T>
Tensor<T> sphere_distance(const Tensor<T>& a, const Tensor<T>& b, const SphereConfig& cfg) {
  auto map = sphere_distance_map(a, b, cfg);
  auto total = sum_all(map);
  if (cfg.reduction == Reduction::sum) return total;
  const int64_t pixels = static_cast<int64_t>(a.shape()[0]) * a.shape()[1];
  return scale(total, static_cast<T>(1.0 / static_cast<double>(pixels)));
}

// Mean over pixels of (1 - cosine similarity) on raw Euclidean features.
template <typename T>
Tensor<T> cosine_distance_raw(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "cosine_distance_raw: shape mismatch");
  require(a.value().rank() == 3, "cosine_distance_raw: want rank-3");
  for (int64_t p = 0; p < a.numel() / a.shape()[2]; ++p) {
    if (sphdetail::pixel_norm_cast(&a.value().data[p * a.shape()[2]], a.shape()[2]) == 0.0 ||
        sphdetail::pixel_norm_cast(&b.value().data[p * b.shape()[2]], b.shape()[2]) == 0.0)
      fail("cosine_distance_raw: zero-norm pixel vector");
  }
  auto dot = channel_sum(mul(a, b));
  auto na = sqrt(channel_sum(square(a)));
  auto nb = sqrt(channel_sum(square(b)));
  auto cosmap = div(dot, mul(na, nb));
  const int64_t pixels = static_cast<int64_t>(a.shape()[0]) * a.shape()[1];
  auto one = a.tape().scalar_const(T(1));
  return scale(sum_all(sub(one, cosmap)), static_cast<T>(1.0 / pixels));
}

// S{E(a), E(b)}: exp-map both Euclidean maps (each with its own pre-scale)
// and take the spherical distance.
template <typename T>
Tensor<T> spherical_feature_distance(const Tensor<T>& a, const Tensor<T>& b,
                                     const SphereConfig& cfg) {
  require(a.shape() == b.shape(), "spherical_feature_distance: shape mismatch");
  return sphere_distance(exp_map(a, cfg), exp_map(b, cfg), cfg);
}

// --- plain (non-tape) conveniences -----------------------------------------

template <typename T>
double sphere_distance_array(const Array<T>& a, const Array<T>& b, const SphereConfig& cfg) {
  require(same_shape(a, b), "sphere_distance: shape mismatch");
  Tape<T> tp(false);
  return static_cast<double>(
      sphere_distance(tp.constant(a), tp.constant(b), cfg).scalar());
}

template <typename T>
Array<T> exp_map_prescaled_array(const Array<T>& phi, const SphereConfig& cfg, T* s_out = nullptr) {
  T s = cfg.prescale ? exp_prescale_factor(phi, cfg) : T(1);
  if (s_out) *s_out = s;
  if (s == T(1)) return exp_map_array(phi, cfg);
  Array<T> scaled = phi;
  for (auto& v : scaled.data) v *= s;
  return exp_map_array(scaled, cfg);
}

}  // namespace ssdn
