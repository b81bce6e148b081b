#include "adt/tape.hpp"

#include <string>

#include "adt/error.hpp"

namespace adt {

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericError("tape: non-finite leaf value");
  nodes_.push_back(Node{std::move(value), {}, {}, true, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("tape: non-finite constant value");
  nodes_.push_back(Node{std::move(value), {}, {}, false, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by '" + std::string(op) + "'");
  }
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw InvalidArgument(std::string(op) + ": input recorded on another tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var loss) const {
  if (&loss.tape() != this) throw InvalidArgument("backward: loss recorded on another tape");
  if (loss.value().size() != 1) {
    throw InvalidArgument("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  grads[loss.id()] = Tensor(loss.shape(), 1.0);
  std::vector<Tensor> in_grads;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (grads[i].empty() || !node.requires_grad || !node.backward) continue;
    in_grads.clear();
    for (auto in : node.inputs) in_grads.emplace_back(nodes_[in].value.shape());
    node.backward(grads[i], in_grads);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const auto in = node.inputs[k];
      if (!nodes_[in].requires_grad) continue;
      if (grads[in].empty()) {
        grads[in] = std::move(in_grads[k]);
      } else {
        auto dst = grads[in].data();
        auto src = in_grads[k].data();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].is_leaf && !grads[i].empty() && !grads[i].all_finite()) {
      throw NumericError("backward: non-finite gradient at leaf " + std::to_string(i));
    }
  }
  return Gradients(this, std::move(grads));
}

Tensor Gradients::of(Var v) const {
  if (&v.tape() != tape_) throw InvalidArgument("gradients: variable from another tape");
  const auto& g = grads_[v.id()];
  if (g.empty()) return Tensor::zeros_like(v.value());
  return g;
}

}  // namespace adt
