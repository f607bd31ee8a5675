#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ctx3d/nn/tensor.hpp"

namespace ctx3d::nn {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t index = 0;
};

/// Reverse-mode record of executed operations. One tape per forward pass;
/// confined to the thread that builds it.
template <typename T>
class Tape {
 public:
  // Receives the gradient of the op output; accumulates into input grads.
  using BackwardFn = std::function<void(const Tensor<T>& grad_out, Tape& tape)>;

  Var leaf(Tensor<T> value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), std::nullopt, requires_grad});
    return Var{nodes_.size() - 1};
  }
  Var leaf(Tensor<T> value) {
    bool rg = value.requires_grad;
    return leaf(std::move(value), rg);
  }
  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  // Records an op output. The backward closure is kept only if some input
  // requires a gradient; otherwise the output is a constant.
  Var record(Tensor<T> value, std::span<const Var> inputs, BackwardFn backward) {
    bool rg = false;
    for (Var v : inputs) rg = rg || requires_grad(v);
    Var out = leaf(std::move(value), rg);
    if (rg) ops_.push_back(Op{out.index, std::move(backward)});
    return out;
  }
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  const Tensor<T>& value(Var v) const { return node(v).value; }
  const Shape& shape(Var v) const { return node(v).value.shape(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  bool has_grad(Var v) const { return node(v).grad.has_value(); }

  // Gradient of the last backward() root w.r.t. v; zeros if v received none.
  Tensor<T> grad(Var v) const {
    const Node& n = node(v);
    if (n.grad) return *n.grad;
    return Tensor<T>(n.value.shape());
  }

  // Mutable gradient accumulator for v, zero-initialised on first use.
  // Returns nullptr when v does not require a gradient.
  Tensor<T>* grad_buffer(Var v) {
    Node& n = node(v);
    if (!n.requires_grad) return nullptr;
    if (!n.grad) n.grad.emplace(n.value.shape());
    return &*n.grad;
  }

  void accumulate(Var v, const Tensor<T>& g) {
    Tensor<T>* buf = grad_buffer(v);
    if (!buf) return;
    if (buf->numel() != g.numel()) throw std::logic_error("tape: gradient shape mismatch");
    for (std::size_t i = 0; i < g.numel(); ++i) (*buf)[i] += g[i];
  }

  // Seeds d(root)/d(root) = 1 and runs recorded ops in exact reverse order.
  void backward(Var root) {
    Node& r = node(root);
    if (r.value.numel() != 1) throw std::invalid_argument("tape: backward root must be scalar");
    for (Node& n : nodes_) n.grad.reset();
    if (!r.requires_grad) return;
    r.grad.emplace(r.value.shape(), T{1});
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      Node& out = nodes_[it->output];
      if (!out.grad) continue;
      // Closures never add nodes, so this reference stays valid.
      it->backward(*out.grad, *this);
    }
  }

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_ops() const { return ops_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    bool requires_grad = false;
  };
  struct Op {
    std::size_t output;
    BackwardFn backward;
  };

  Node& node(Var v) {
    if (v.index >= nodes_.size()) throw std::out_of_range("tape: invalid var");
    return nodes_[v.index];
  }
  const Node& node(Var v) const {
    if (v.index >= nodes_.size()) throw std::out_of_range("tape: invalid var");
    return nodes_[v.index];
  }

  std::vector<Node> nodes_;
  std::vector<Op> ops_;
};

}  // namespace ctx3d::nn
