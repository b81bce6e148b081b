#pragma once

#include <cstddef>
#include <functional>
#include <string_view>
#include <vector>

#include "adt/tensor.hpp"

namespace adt {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Receives the output gradient and accumulates into the (pre-zeroed) input
// gradients, one per input in recording order.
using BackwardFn = std::function<void(const Tensor& grad_out, std::vector<Tensor>& grad_in)>;

class Gradients;

/// Append-only record of primitive operations for reverse-mode differentiation.
///
/// Single owner, single thread. Every recorded value is checked for NaN/Inf.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable leaf (parameter or input whose gradient is wanted).
  Var leaf(Tensor value);
  // Leaf that never receives a gradient.
  Var constant(Tensor value);
  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool is_leaf(std::size_t id) const { return nodes_[id].is_leaf; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Leaves not reachable from the loss
  /// report zero gradients.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };
  std::vector<Node> nodes_;
};

class Gradients {
 public:
  Gradients(const Tape* tape, std::vector<Tensor> grads) : tape_(tape), grads_(std::move(grads)) {}

  // Gradient of the loss w.r.t. a node; zeros when unreachable.
  Tensor of(Var v) const;

 private:
  const Tape* tape_;
  std::vector<Tensor> grads_;
};

}  // namespace adt
