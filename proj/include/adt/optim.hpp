#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "adt/tensor.hpp"

namespace adt {

enum class OptimizerKind { sgd_momentum, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd_momentum;
  Real lr = 0.1;
  Real momentum = 0.9;  // sgd only
  Real beta1 = 0.9;     // adam only
  Real beta2 = 0.999;
  Real weight_decay = 0.0;
  Real eps = 1e-8;

  static OptimizerConfig sgd(Real lr, Real momentum, Real weight_decay);
  static OptimizerConfig adam(Real lr, Real beta1, Real beta2);

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// Per-parameter optimizer slots. Slots are allocated lazily on the first
/// step and must keep the parameter shapes afterwards.
struct OptState {
  OptimizerConfig config;
  std::vector<Tensor> first;   // sgd velocity or adam first moment
  std::vector<Tensor> second;  // adam second moment
  std::uint64_t step = 0;

  OptState() = default;
  explicit OptState(OptimizerConfig c) : config(c) {}
};

// v <- mu*v + g + wd*theta;  theta <- theta - lr*v
void sgd_momentum_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptState& state);
// Bias-corrected Adam. With beta1 = beta2 = 0 the update is lr*g/(|g|+eps).
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptState& state);

// Dispatches on state.config.kind.
void descend(std::span<Tensor* const> params, std::span<const Tensor> grads, OptState& state);
// Gradient ascent: descend on the negated gradients.
void ascend(std::span<Tensor* const> params, std::span<const Tensor> grads, OptState& state);

}  // namespace adt
