#pragma once

#include <cmath>
#include <string>
#include <unordered_map>

#include "ssdn/network.hpp"

namespace ssdn {

template <typename T>
using NamedGrads = std::unordered_map<std::string, Array<T>>;

template <typename T>
class Adam {
 public:
  explicit Adam(double lr = 5e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  // Updates exactly the parameters present in `grads`.
  void step(ParamStore<T>& params, const NamedGrads<T>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, value] : params.items()) {
      auto git = grads.find(name);
      if (git == grads.end()) continue;
      const Array<T>& g = git->second;
      require(same_shape(g, value), "Adam: gradient shape mismatch for " + name);
      Slot& s = slot(name, value.shape);
      for (int64_t i = 0; i < value.size(); ++i) {
        double gi = static_cast<double>(g.data[i]);
        s.m.data[i] = beta1_ * s.m.data[i] + (1.0 - beta1_) * gi;
        s.v.data[i] = beta2_ * s.v.data[i] + (1.0 - beta2_) * gi * gi;
        double mh = s.m.data[i] / bc1;
        double vh = s.v.data[i] / bc2;
        value.data[i] -= static_cast<T>(lr_ * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

 private:
  struct Slot {
    Array<double> m, v;
  };
  Slot& slot(const std::string& name, const Shape& shape) {
    auto it = slots_.find(name);
    if (it == slots_.end())
      it = slots_.emplace(name, Slot{Array<double>::zeros(shape), Array<double>::zeros(shape)})
               .first;
    return it->second;
  }

  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::unordered_map<std::string, Slot> slots_;
};

// Gradients by node id (from backward) keyed back to parameter names.
template <typename T>
NamedGrads<T> grads_by_name(const Lease<T>& l, GradMap<T>& node_grads) {
  NamedGrads<T> out;
  for (const auto& [name, tensor] : l.tensors) {
    auto it = node_grads.find(tensor.id());
    if (it != node_grads.end()) out.emplace(name, std::move(it->second));
  }
  return out;
}

}  // namespace ssdn
