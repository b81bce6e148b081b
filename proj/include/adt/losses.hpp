#pragma once

#include <span>
#include <string>

#include "adt/ops.hpp"

namespace adt {

enum class LossKind {
  cross_entropy,
  cw_margin,      // max_{j != y} z_j - z_y
  kl_to_natural,  // KL(f(x + delta) || f(x))
  trades,         // CE(f(x), y) + beta * KL(f(x + delta) || f(x))
  logit,          // z_y itself; linear test models
};

struct Loss {
  LossKind kind = LossKind::cross_entropy;
  Real beta = 6.0;  // trades only

  bool needs_natural() const { return kind == LossKind::kl_to_natural || kind == LossKind::trades; }

  /// Per-row loss of perturbed logits. `natural` holds the logits of the clean
  /// inputs aligned row-for-row; it is only read when needs_natural().
  Var rows(Var logits, std::span<const int> labels, Var natural = {}) const;

  friend bool operator==(const Loss&, const Loss&) = default;
};

std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

}  // namespace adt
