#pragma once

#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ssdn/array.hpp"

namespace ssdn {

template <typename T>
class Tape;

// Lightweight handle into the active tape.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr && id_ >= 0; }
  int id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }
  const Array<T>& value() const;
  const Shape& shape() const { return value().shape; }
  int64_t numel() const { return value().size(); }
  bool requires_grad() const;
  T scalar() const {
    require(numel() == 1, "Tensor::scalar: not a scalar");
    return value().data[0];
  }

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

template <typename T>
using GradMap = std::unordered_map<int, Array<T>>;

// Append-only operation record for one forward/backward pass. Node inputs
// always reference earlier nodes, so reverse insertion order is a valid
// topological order for the backward sweep.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape<T>&, const Array<T>& gout)>;

  explicit Tape(bool strict = true) : strict_(strict) {}

  bool strict() const { return strict_; }
  size_t num_nodes() const { return nodes_.size(); }

  Tensor<T> leaf(Array<T> value, bool requires_grad = false) {
    return make_node(std::move(value), {}, nullptr, requires_grad, true, "leaf");
  }

  Tensor<T> constant(Array<T> value) { return leaf(std::move(value), false); }

  Tensor<T> scalar_const(T v) { return constant(Array<T>({1}, std::vector<T>{v})); }

  Tensor<T> emit(const char* op, Array<T> value, std::vector<int> parents, BackwardFn bw) {
    bool rg = false;
    for (int p : parents) rg = rg || nodes_[p].requires_grad;
    return make_node(std::move(value), std::move(parents), std::move(bw), rg, false, op);
  }

  const Array<T>& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool is_leaf(int id) const { return nodes_[id].leaf; }

  // Gradient accumulation during the backward sweep. No-op for subgraphs
  // that cannot reach a differentiable leaf.
  void accum(int id, const Array<T>& g) {
    if (!nodes_[id].requires_grad) return;
    Array<T>& slot = grads_[id];
    if (slot.data.empty()) {
      slot = g;
      return;
    }
    require(same_shape(slot, g), "accum: gradient shape mismatch");
    for (int64_t i = 0; i < g.size(); ++i) slot.data[i] += g.data[i];
  }

  Array<T>* grad_slot(int id) {
    auto it = grads_.find(id);
    return it == grads_.end() ? nullptr : &it->second;
  }

  // Reverse sweep from a scalar loss. Returns gradients for every
  // requires_grad leaf (zero-filled when the leaf is unreachable).
  // The node list is released afterwards; the tape cannot run twice.
  GradMap<T> backward(const Tensor<T>& loss) {
    require(!done_, "backward: tape already consumed");
    require(&loss.tape() == this, "backward: loss from another tape");
    require(loss.numel() == 1, "backward: loss is not a scalar");
    done_ = true;

    std::vector<std::pair<int, Shape>> param_leaves;
    for (int i = 0; i < static_cast<int>(nodes_.size()); ++i)
      if (nodes_[i].leaf && nodes_[i].requires_grad)
        param_leaves.emplace_back(i, nodes_[i].value.shape);

    if (nodes_[loss.id()].requires_grad)
      grads_[loss.id()] = Array<T>(nodes_[loss.id()].value.shape, T(1));

    for (int i = loss.id(); i >= 0; --i) {
      auto it = grads_.find(i);
      if (it == grads_.end() || nodes_[i].leaf) continue;
      Array<T> g = std::move(it->second);  // interior grads are transient
      grads_.erase(it);
      if (nodes_[i].backward) nodes_[i].backward(*this, g);
    }

    GradMap<T> out;
    for (auto& [id, shape] : param_leaves) {
      auto it = grads_.find(id);
      if (it != grads_.end())
        out.emplace(id, std::move(it->second));
      else
        out.emplace(id, Array<T>::zeros(shape));
    }
    nodes_.clear();
    grads_.clear();
    return out;
  }

 private:
  struct Node {
    Array<T> value;
    std::vector<int> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  Tensor<T> make_node(Array<T> value, std::vector<int> parents, BackwardFn bw,
                      bool requires_grad, bool leaf, const char* op) {
    require(!done_, "tape: consumed by backward, start a new tape");
    if (strict_ && !value.all_finite())
      throw numeric_error(std::string("non-finite forward value in op '") + op + "'");
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{std::move(value), std::move(parents), std::move(bw),
                          requires_grad, leaf});
    return Tensor<T>(this, id);
  }

  std::vector<Node> nodes_;
  GradMap<T> grads_;
  bool strict_ = true;
  bool done_ = false;
};

template <typename T>
const Array<T>& Tensor<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

}  // namespace ssdn
