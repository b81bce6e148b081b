#include "adt/optim.hpp"

#include <cmath>
#include <limits>

#include "adt/error.hpp"

namespace adt {

OptimizerConfig OptimizerConfig::sgd(Real lr, Real momentum, Real weight_decay) {
  OptimizerConfig c;
  c.kind = OptimizerKind::sgd_momentum;
  c.lr = lr;
  c.momentum = momentum;
  c.weight_decay = weight_decay;
  return c;
}

OptimizerConfig OptimizerConfig::adam(Real lr, Real beta1, Real beta2) {
  OptimizerConfig c;
  c.kind = OptimizerKind::adam;
  c.lr = lr;
  c.beta1 = beta1;
  c.beta2 = beta2;
  return c;
}

namespace {

void check_aligned(std::span<Tensor* const> params, std::span<const Tensor> grads, std::vector<Tensor>& slots,
                   const char* who) {
  if (params.size() != grads.size()) throw InvalidArgument(std::string(who) + ": parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) {
      throw InvalidArgument(std::string(who) + ": gradient shape " + shape_string(grads[i].shape()) +
                            " does not match parameter " + shape_string(params[i]->shape()));
    }
  }
  if (slots.empty()) {
    for (auto* p : params) slots.push_back(Tensor::zeros_like(*p));
  }
  if (slots.size() != params.size()) throw InvalidArgument(std::string(who) + ": optimizer state bound to other parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (slots[i].shape() != params[i]->shape()) {
      throw InvalidArgument(std::string(who) + ": optimizer slot shape changed");
    }
  }
}

}  // namespace

void sgd_momentum_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptState& state) {
  check_aligned(params, grads, state.first, "sgd_momentum_step");
  const auto& c = state.config;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i]->data();
    auto v = state.first[i].data();
    auto g = grads[i].data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      v[j] = c.momentum * v[j] + g[j] + c.weight_decay * theta[j];
      theta[j] -= c.lr * v[j];
    }
  }
  ++state.step;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptState& state) {
  if (state.step == std::numeric_limits<std::uint64_t>::max() / 2) throw NumericError("adam_step: step counter overflow");
  check_aligned(params, grads, state.first, "adam_step");
  if (state.second.empty()) {
    for (auto* p : params) state.second.push_back(Tensor::zeros_like(*p));
  }
  const auto& c = state.config;
  ++state.step;
  const Real t = static_cast<Real>(state.step);
  const Real bc1 = 1.0 - std::pow(c.beta1, t);
  const Real bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i]->data();
    auto m = state.first[i].data();
    auto v = state.second[i].data();
    auto g = grads[i].data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const Real gj = g[j] + c.weight_decay * theta[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      const Real mhat = m[j] / bc1;
      const Real vhat = v[j] / bc2;
      theta[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

void descend(std::span<Tensor* const> params, std::span<const Tensor> grads, OptState& state) {
  if (state.config.kind == OptimizerKind::adam) adam_step(params, grads, state);
  else sgd_momentum_step(params, grads, state);
}

void ascend(std::span<Tensor* const> params, std::span<const Tensor> grads, OptState& state) {
  std::vector<Tensor> negated(grads.begin(), grads.end());
  for (auto& t : negated)
    for (auto& v : t.data()) v = -v;
  descend(params, negated, state);
}

}  // namespace adt
