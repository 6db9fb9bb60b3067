#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssdn/rng.hpp"

namespace ssdn {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

// numeric failure (non-finite values, NaN loss): distinct from validation
// errors so the CLI can exit with code 2
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense value array, channels-last for rank-3 feature maps (H x W x C).
template <typename T>
struct Array {
  Shape shape;
  std::vector<T> data;

  Array() = default;
  explicit Array(Shape s, T fill = T(0))
      : shape(std::move(s)), data(shape_numel(shape), fill) {
    for (int d : shape) require(d > 0, "Array: nonpositive dim " + shape_str(shape));
  }
  Array(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    require(shape_numel(shape) == static_cast<int64_t>(data.size()),
            "Array: shape/data mismatch " + shape_str(shape));
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[i]; }

  T& operator[](int64_t i) { return data[i]; }
  const T& operator[](int64_t i) const { return data[i]; }

  // rank-3 (H, W, C)
  T& at(int y, int x, int c) {
    return data[(static_cast<int64_t>(y) * shape[1] + x) * shape[2] + c];
  }
  const T& at(int y, int x, int c) const {
    return data[(static_cast<int64_t>(y) * shape[1] + x) * shape[2] + c];
  }
  // rank-2 (rows, cols)
  T& at(int r, int c) { return data[static_cast<int64_t>(r) * shape[1] + c]; }
  const T& at(int r, int c) const { return data[static_cast<int64_t>(r) * shape[1] + c]; }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  static Array zeros(Shape s) { return Array(std::move(s)); }
  static Array full(Shape s, T v) { return Array(std::move(s), v); }
  static Array random_uniform(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Array a(std::move(s));
    for (auto& v : a.data) v = static_cast<T>(rng.uniform(lo, hi));
    return a;
  }
  static Array random_normal(Shape s, Rng& rng, double mean = 0.0, double stddev = 1.0) {
    Array a(std::move(s));
    for (auto& v : a.data) v = static_cast<T>(rng.normal(mean, stddev));
    return a;
  }
};

template <typename T, typename U>
Array<T> cast_array(const Array<U>& a) {
  Array<T> out(a.shape);
  for (int64_t i = 0; i < a.size(); ++i) out.data[i] = static_cast<T>(a.data[i]);
  return out;
}

template <typename T>
bool same_shape(const Array<T>& a, const Array<T>& b) {
  return a.shape == b.shape;
}

template <typename T>
double max_abs_diff(const Array<T>& a, const Array<T>& b) {
  require(same_shape(a, b), "max_abs_diff: shape mismatch");
  double m = 0;
  for (int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
  return m;
}

}  // namespace ssdn
