#pragma once

#include <span>
#include <vector>

#include "adt/tape.hpp"

namespace adt {

enum class Activation { relu, tanh, identity };

// Elementwise binary ops. `b` may also be a rank-0 scalar, and for add() a
// rank-1 row vector broadcast across the rows of a matrix `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

Var scale(Var a, Real s);
Var add_scalar(Var a, Real s);
Var neg(Var a);

Var matmul(Var a, Var b);

Var relu(Var a);
Var tanh(Var a);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
// log(1 - tanh(a)^2), evaluated without cancellation for any finite a.
Var log_sech2(Var a);
// Hard clamp; gradient is zero outside [lo, hi].
Var clamp(Var a, Real lo, Real hi);
Var activate(Var a, Activation act);

Var sum(Var a);
Var mean(Var a);
// Sum over the columns of a matrix: (m x n) -> (m).
Var row_sum(Var a);
// Multiplies row i of a matrix by s[i].
Var scale_rows(Var a, Var s);

// Each row repeated `k` times consecutively: (m x n) -> (mk x n).
Var repeat_rows(Var a, std::size_t k);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var reshape(Var a, Shape shape);

// Row-wise classification losses on a (m x C) logit matrix; all return (m).
Var softmax_cross_entropy_rows(Var logits, std::span<const int> labels);
// KL(softmax(p) || softmax(q)) per row.
Var kl_rows(Var p_logits, Var q_logits);
// max_{j != y} z_j - z_y per row.
Var cw_margin_rows(Var logits, std::span<const int> labels);
// z_y per row.
Var pick_rows(Var logits, std::span<const int> labels);
Var cosine_rows(Var a, Var b);

// Single-example conveniences over rank-1 logits, returning scalars.
Var softmax_cross_entropy(Var logits, int label);
Var kl_divergence(Var p_logits, Var q_logits);

}  // namespace adt
