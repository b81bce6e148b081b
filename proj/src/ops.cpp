#include "adt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "adt/error.hpp"

namespace adt {
namespace {

Tape& common_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) throw InvalidArgument(std::string(op) + ": operands on different tapes");
  return a.tape();
}

enum class Broadcast { same, scalar, row };

Broadcast classify(const Tensor& a, const Tensor& b, const char* op, bool allow_row) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.rank() == 0) return Broadcast::scalar;
  if (allow_row && a.rank() == 2 && b.rank() == 1 && b.size() == a.cols()) return Broadcast::row;
  throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw InvalidArgument(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

void require_labels(const Tensor& logits, std::span<const int> labels, const char* op) {
  require_matrix(logits, op);
  if (labels.size() != logits.rows()) {
    throw InvalidArgument(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(logits.rows()) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
      throw InvalidArgument(std::string(op) + ": label " + std::to_string(y) + " out of range [0, " +
                            std::to_string(logits.cols()) + ")");
    }
  }
}

// Elementwise unary op given f(x) and f'(x, f(x)).
template <class F, class D>
Var unary(const char* name, Var a, F f, D df) {
  Tape& tape = a.tape();
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const auto ia = a.id();
  const auto io = tape.size();
  return tape.record(name, std::move(out), {a},
                     [&tape, ia, io, df](const Tensor& g, std::vector<Tensor>& gi) {
                       const Tensor& x = tape.value(ia);
                       const Tensor& y = tape.value(io);
                       for (std::size_t i = 0; i < x.size(); ++i) gi[0][i] = g[i] * df(x[i], y[i]);
                     });
}

// Log-sum-exp and softmax of one row.
Real log_sum_exp(std::span<const Real> z) {
  Real m = -std::numeric_limits<Real>::infinity();
  for (Real v : z) m = std::max(m, v);
  Real s = 0;
  for (Real v : z) s += std::exp(v - m);
  return m + std::log(s);
}

Tensor as_row_matrix(const Tensor& t) { return t.reshaped({1, t.size()}); }

}  // namespace

Var add(Var a, Var b) {
  Tape& tape = common_tape(a, b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const auto kind = classify(av, bv, "add", true);
  Tensor out = av;
  const auto cols = av.cols();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += kind == Broadcast::same ? bv[i] : kind == Broadcast::scalar ? bv[0] : bv[i % cols];
  }
  return tape.record("add", std::move(out), {a, b}, [kind, cols](const Tensor& g, std::vector<Tensor>& gi) {
    gi[0] = g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (kind == Broadcast::same) gi[1][i] += g[i];
      else if (kind == Broadcast::scalar) gi[1][0] += g[i];
      else gi[1][i % cols] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& tape = common_tape(a, b, "sub");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const auto kind = classify(av, bv, "sub", false);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= kind == Broadcast::same ? bv[i] : bv[0];
  return tape.record("sub", std::move(out), {a, b}, [kind](const Tensor& g, std::vector<Tensor>& gi) {
    gi[0] = g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (kind == Broadcast::same) gi[1][i] -= g[i];
      else gi[1][0] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& tape = common_tape(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const auto kind = classify(av, bv, "mul", false);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= kind == Broadcast::same ? bv[i] : bv[0];
  const auto ia = a.id(), ib = b.id();
  return tape.record("mul", std::move(out), {a, b},
                     [&tape, ia, ib, kind](const Tensor& g, std::vector<Tensor>& gi) {
                       const Tensor& x = tape.value(ia);
                       const Tensor& y = tape.value(ib);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (kind == Broadcast::same) {
                           gi[0][i] = g[i] * y[i];
                           gi[1][i] = g[i] * x[i];
                         } else {
                           gi[0][i] = g[i] * y[0];
                           gi[1][0] += g[i] * x[i];
                         }
                       }
                     });
}

Var scale(Var a, Real s) {
  return unary("scale", a, [s](Real x) { return s * x; }, [s](Real, Real) { return s; });
}

Var add_scalar(Var a, Real s) {
  return unary("add_scalar", a, [s](Real x) { return x + s; }, [](Real, Real) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var matmul(Var a, Var b) {
  Tape& tape = common_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const auto m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw InvalidArgument("matmul: inner dimensions differ " + shape_string(av.shape()) + " x " +
                          shape_string(bv.shape()));
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const Real x = av[i * k + p];
      if (x == 0.0) continue;
      const Real* brow = &bv.storage()[p * n];
      Real* orow = &out.storage()[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  }
  const auto ia = a.id(), ib = b.id();
  const bool need_a = a.requires_grad(), need_b = b.requires_grad();
  return tape.record("matmul", std::move(out), {a, b},
                     [&tape, ia, ib, m, k, n, need_a, need_b](const Tensor& g, std::vector<Tensor>& gi) {
                       const Tensor& x = tape.value(ia);
                       const Tensor& y = tape.value(ib);
                       if (need_a) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             Real s = 0;
                             for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * y[p * n + j];
                             gi[0][i * k + p] = s;
                           }
                       }
                       if (need_b) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const Real xv = x[i * k + p];
                             if (xv == 0.0) continue;
                             for (std::size_t j = 0; j < n; ++j) gi[1][p * n + j] += xv * g[i * n + j];
                           }
                       }
                     });
}

Var relu(Var a) {
  return unary("relu", a, [](Real x) { return x > 0 ? x : 0.0; },
               [](Real x, Real) { return x > 0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  return unary("tanh", a, [](Real x) { return std::tanh(x); }, [](Real, Real y) { return 1.0 - y * y; });
}

Var softplus(Var a) {
  return unary("softplus", a, [](Real x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
               [](Real x, Real) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var exp(Var a) {
  return unary("exp", a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

Var log(Var a) {
  return unary("log", a, [](Real x) { return std::log(x); }, [](Real x, Real) { return 1.0 / x; });
}

Var square(Var a) {
  return unary("square", a, [](Real x) { return x * x; }, [](Real x, Real) { return 2.0 * x; });
}

Var log_sech2(Var a) {
  static const Real kLog2 = std::log(2.0);
  return unary(
      "log_sech2", a,
      [](Real x) {
        const Real ax = std::abs(x);
        return 2.0 * (kLog2 - ax - std::log1p(std::exp(-2.0 * ax)));
      },
      [](Real x, Real) { return -2.0 * std::tanh(x); });
}

Var clamp(Var a, Real lo, Real hi) {
  if (!(lo <= hi)) throw InvalidArgument("clamp: lo > hi");
  return unary("clamp", a, [lo, hi](Real x) { return std::clamp(x, lo, hi); },
               [lo, hi](Real x, Real) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var activate(Var a, Activation act) {
  switch (act) {
    case Activation::relu: return relu(a);
    case Activation::tanh: return tanh(a);
    case Activation::identity: return a;
  }
  return a;
}

Var sum(Var a) {
  Real s = 0;
  for (Real v : a.value().data()) s += v;
  return a.tape().record("sum", Tensor::scalar(s), {a}, [](const Tensor& g, std::vector<Tensor>& gi) {
    for (auto& v : gi[0].data()) v = g[0];
  });
}

Var mean(Var a) {
  const auto n = a.value().size();
  if (n == 0) throw InvalidArgument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<Real>(n));
}

Var row_sum(Var a) {
  const Tensor& av = a.value();
  require_matrix(av, "row_sum");
  const auto m = av.rows(), n = av.cols();
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += av[i * n + j];
  return a.tape().record("row_sum", std::move(out), {a}, [m, n](const Tensor& g, std::vector<Tensor>& gi) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gi[0][i * n + j] = g[i];
  });
}

Var scale_rows(Var a, Var s) {
  Tape& tape = common_tape(a, s, "scale_rows");
  const Tensor& av = a.value();
  const Tensor& sv = s.value();
  require_matrix(av, "scale_rows");
  const auto m = av.rows(), n = av.cols();
  if (sv.rank() != 1 || sv.size() != m) throw InvalidArgument("scale_rows: need one factor per row");
  Tensor out = av;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= sv[i];
  const auto ia = a.id(), is = s.id();
  return tape.record("scale_rows", std::move(out), {a, s},
                     [&tape, ia, is, m, n](const Tensor& g, std::vector<Tensor>& gi) {
                       const Tensor& x = tape.value(ia);
                       const Tensor& f = tape.value(is);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) {
                           gi[0][i * n + j] = g[i * n + j] * f[i];
                           gi[1][i] += g[i * n + j] * x[i * n + j];
                         }
                     });
}

Var repeat_rows(Var a, std::size_t k) {
  const Tensor& av = a.value();
  require_matrix(av, "repeat_rows");
  if (k == 0) throw InvalidArgument("repeat_rows: k must be positive");
  const auto m = av.rows(), n = av.cols();
  Tensor out({m * k, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t r = 0; r < k; ++r)
      std::copy_n(&av.storage()[i * n], n, &out.storage()[(i * k + r) * n]);
  return a.tape().record("repeat_rows", std::move(out), {a}, [m, n, k](const Tensor& g, std::vector<Tensor>& gi) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t j = 0; j < n; ++j) gi[0][i * n + j] += g[(i * k + r) * n + j];
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols: no inputs");
  Tape& tape = parts.front().tape();
  const auto m = parts.front().value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p.value(), "concat_cols");
    if (&p.tape() != &tape) throw InvalidArgument("concat_cols: operands on different tapes");
    if (p.value().rows() != m) throw InvalidArgument("concat_cols: row counts differ");
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor out({m, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(&pv.storage()[i * widths[k]], widths[k], &out.storage()[i * total + off]);
    off += widths[k];
  }
  return tape.record("concat_cols", std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                     [m, total, widths](const Tensor& g, std::vector<Tensor>& gi) {
                       std::size_t o = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         for (std::size_t i = 0; i < m; ++i)
                           std::copy_n(&g.storage()[i * total + o], widths[k], &gi[k].storage()[i * widths[k]]);
                         o += widths[k];
                       }
                     });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  require_matrix(av, "slice_cols");
  if (begin >= end || end > av.cols()) throw InvalidArgument("slice_cols: bad column range");
  const auto m = av.rows(), n = av.cols(), w = end - begin;
  Tensor out({m, w});
  for (std::size_t i = 0; i < m; ++i) std::copy_n(&av.storage()[i * n + begin], w, &out.storage()[i * w]);
  return a.tape().record("slice_cols", std::move(out), {a}, [m, n, w, begin](const Tensor& g, std::vector<Tensor>& gi) {
    for (std::size_t i = 0; i < m; ++i) std::copy_n(&g.storage()[i * w], w, &gi[0].storage()[i * n + begin]);
  });
}

Var reshape(Var a, Shape shape) {
  return a.tape().record("reshape", a.value().reshaped(std::move(shape)), {a},
                         [](const Tensor& g, std::vector<Tensor>& gi) { gi[0] = g.reshaped(gi[0].shape()); });
}

Var softmax_cross_entropy_rows(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  require_labels(z, labels, "softmax_cross_entropy");
  const auto m = z.rows(), c = z.cols();
  Tensor out({m});
  Tensor probs({m, c});
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = z.row(i);
    const Real lse = log_sum_exp(row);
    out[i] = lse - row[labels[i]];
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - lse);
  }
  std::vector<int> y(labels.begin(), labels.end());
  return logits.tape().record("softmax_cross_entropy", std::move(out), {logits},
                              [probs = std::move(probs), y = std::move(y), m, c](const Tensor& g,
                                                                                 std::vector<Tensor>& gi) {
                                for (std::size_t i = 0; i < m; ++i) {
                                  for (std::size_t j = 0; j < c; ++j) gi[0][i * c + j] = g[i] * probs[i * c + j];
                                  gi[0][i * c + y[i]] -= g[i];
                                }
                              });
}

Var kl_rows(Var p_logits, Var q_logits) {
  Tape& tape = common_tape(p_logits, q_logits, "kl_divergence");
  const Tensor& p = p_logits.value();
  const Tensor& q = q_logits.value();
  require_matrix(p, "kl_divergence");
  if (p.shape() != q.shape()) {
    throw InvalidArgument("kl_divergence: shape mismatch " + shape_string(p.shape()) + " vs " +
                          shape_string(q.shape()));
  }
  const auto m = p.rows(), c = p.cols();
  Tensor out({m});
  Tensor pp({m, c}), qq({m, c}), diff({m, c});
  for (std::size_t i = 0; i < m; ++i) {
    const Real lp = log_sum_exp(p.row(i));
    const Real lq = log_sum_exp(q.row(i));
    Real kl = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const Real logp = p[i * c + j] - lp;
      const Real logq = q[i * c + j] - lq;
      pp[i * c + j] = std::exp(logp);
      qq[i * c + j] = std::exp(logq);
      diff[i * c + j] = logp - logq;
      kl += pp[i * c + j] * diff[i * c + j];
    }
    out[i] = std::max(kl, 0.0);
  }
  Tensor kl_raw = out;
  return tape.record("kl_divergence", std::move(out), {p_logits, q_logits},
                     [pp = std::move(pp), qq = std::move(qq), diff = std::move(diff), kl = std::move(kl_raw), m,
                      c](const Tensor& g, std::vector<Tensor>& gi) {
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < c; ++j) {
                           const auto k = i * c + j;
                           gi[0][k] = g[i] * pp[k] * (diff[k] - kl[i]);
                           gi[1][k] = g[i] * (qq[k] - pp[k]);
                         }
                     });
}

Var cw_margin_rows(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  require_labels(z, labels, "cw_margin");
  const auto m = z.rows(), c = z.cols();
  if (c < 2) throw InvalidArgument("cw_margin: need at least two classes");
  Tensor out({m});
  std::vector<std::size_t> best(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t b = labels[i] == 0 ? 1 : 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (static_cast<int>(j) != labels[i] && z[i * c + j] > z[i * c + b]) b = j;
    }
    best[i] = b;
    out[i] = z[i * c + b] - z[i * c + labels[i]];
  }
  std::vector<int> y(labels.begin(), labels.end());
  return logits.tape().record("cw_margin", std::move(out), {logits},
                              [best = std::move(best), y = std::move(y), c](const Tensor& g, std::vector<Tensor>& gi) {
                                for (std::size_t i = 0; i < best.size(); ++i) {
                                  gi[0][i * c + best[i]] += g[i];
                                  gi[0][i * c + y[i]] -= g[i];
                                }
                              });
}

Var pick_rows(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  require_labels(z, labels, "pick");
  const auto m = z.rows(), c = z.cols();
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) out[i] = z[i * c + labels[i]];
  std::vector<int> y(labels.begin(), labels.end());
  return logits.tape().record("pick", std::move(out), {logits}, [y = std::move(y), c](const Tensor& g, std::vector<Tensor>& gi) {
    for (std::size_t i = 0; i < y.size(); ++i) gi[0][i * c + y[i]] = g[i];
  });
}

Var cosine_rows(Var a, Var b) {
  Tape& tape = common_tape(a, b, "cosine");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "cosine");
  if (av.shape() != bv.shape()) throw InvalidArgument("cosine: shape mismatch");
  const auto m = av.rows(), n = av.cols();
  constexpr Real kTiny = 1e-24;
  Tensor out({m}), na({m}), nb({m});
  for (std::size_t i = 0; i < m; ++i) {
    Real ab = 0, aa = kTiny, bb = kTiny;
    for (std::size_t j = 0; j < n; ++j) {
      const Real x = av[i * n + j], y = bv[i * n + j];
      ab += x * y;
      aa += x * x;
      bb += y * y;
    }
    na[i] = std::sqrt(aa);
    nb[i] = std::sqrt(bb);
    out[i] = ab / (na[i] * nb[i]);
  }
  Tensor cos = out;
  const auto ia = a.id(), ib = b.id();
  return tape.record("cosine", std::move(out), {a, b},
                     [&tape, ia, ib, m, n, na = std::move(na), nb = std::move(nb), cos = std::move(cos)](
                         const Tensor& g, std::vector<Tensor>& gi) {
                       const Tensor& x = tape.value(ia);
                       const Tensor& y = tape.value(ib);
                       for (std::size_t i = 0; i < m; ++i) {
                         const Real inv = 1.0 / (na[i] * nb[i]);
                         for (std::size_t j = 0; j < n; ++j) {
                           const auto k = i * n + j;
                           gi[0][k] = g[i] * (y[k] * inv - cos[i] * x[k] / (na[i] * na[i]));
                           gi[1][k] = g[i] * (x[k] * inv - cos[i] * y[k] / (nb[i] * nb[i]));
                         }
                       }
                     });
}

Var softmax_cross_entropy(Var logits, int label) {
  const Tensor& z = logits.value();
  if (z.rank() != 1) throw InvalidArgument("softmax_cross_entropy: logits must be rank 1");
  Tape& tape = logits.tape();
  // Reshape through an identity-gradient node so the op stays on the tape.
  Var row = tape.record("reshape", as_row_matrix(z), {logits}, [](const Tensor& g, std::vector<Tensor>& gi) {
    gi[0] = g.reshaped(gi[0].shape());
  });
  const int labels[1] = {label};
  return sum(softmax_cross_entropy_rows(row, labels));
}

Var kl_divergence(Var p_logits, Var q_logits) {
  if (p_logits.value().rank() != 1 || q_logits.value().rank() != 1) {
    throw InvalidArgument("kl_divergence: logits must be rank 1");
  }
  if (p_logits.shape() != q_logits.shape()) throw InvalidArgument("kl_divergence: shape mismatch");
  Tape& tape = p_logits.tape();
  auto reshape = [&tape](Var v) {
    return tape.record("reshape", as_row_matrix(v.value()), {v}, [](const Tensor& g, std::vector<Tensor>& gi) {
      gi[0] = g.reshaped(gi[0].shape());
    });
  };
  return sum(kl_rows(reshape(p_logits), reshape(q_logits)));
}

}  // namespace adt
