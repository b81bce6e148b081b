#include "adt/losses.hpp"

#include "adt/error.hpp"

namespace adt {

Var Loss::rows(Var logits, std::span<const int> labels, Var natural) const {
  if (needs_natural() && !natural.valid()) throw InvalidArgument("loss: natural logits required for " + to_string(kind));
  switch (kind) {
    case LossKind::cross_entropy: return softmax_cross_entropy_rows(logits, labels);
    case LossKind::cw_margin: return cw_margin_rows(logits, labels);
    case LossKind::kl_to_natural: return kl_rows(logits, natural);
    case LossKind::trades:
      if (!(beta > 0)) throw InvalidArgument("loss: trades beta must be positive");
      return add(softmax_cross_entropy_rows(natural, labels), scale(kl_rows(logits, natural), beta));
    case LossKind::logit: return pick_rows(logits, labels);
  }
  throw InvalidArgument("loss: unknown kind");
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::cross_entropy: return "cross_entropy";
    case LossKind::cw_margin: return "cw_margin";
    case LossKind::kl_to_natural: return "kl_to_natural";
    case LossKind::trades: return "trades";
    case LossKind::logit: return "logit";
  }
  return "?";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "cross_entropy" || s == "ce") return LossKind::cross_entropy;
  if (s == "cw_margin" || s == "cw") return LossKind::cw_margin;
  if (s == "kl_to_natural" || s == "kl") return LossKind::kl_to_natural;
  if (s == "trades") return LossKind::trades;
  if (s == "logit") return LossKind::logit;
  throw InvalidArgument("unknown loss '" + s + "'");
}

}  // namespace adt
