#include "adt/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "adt/error.hpp"
#include "adt/optim.hpp"

namespace adt {

namespace {

Tensor as_matrix(const Tensor& t) { return t.rank() == 2 ? t : t.reshaped({t.rows(), t.cols()}); }

Tensor plus(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

void check_batch(const Tensor& x, std::span<const int> y, const Network& net, const char* who) {
  if (x.rank() != 2) throw InvalidArgument(std::string(who) + ": expected a (rows x d) batch");
  if (y.size() != x.rows()) throw InvalidArgument(std::string(who) + ": label count mismatch");
  if (x.cols() != net.input_dim()) {
    throw InvalidArgument(std::string(who) + ": input dim " + std::to_string(x.cols()) + " but network expects " +
                          std::to_string(net.input_dim()));
  }
}

struct Probe {
  Tensor loss;  // (rows)
  Tensor grad;  // d loss / d x_adv
  std::vector<int> pred;
};

// Loss, input gradient and predictions at x_adv in one tape pass.
Probe probe(const Network& net, const Tensor& x_adv, std::span<const int> y, const Loss& loss,
            const Tensor& natural_logits) {
  Tape tape;
  Var xv = tape.leaf(x_adv);
  auto params = bind_parameters(net, tape, ParamMode::constants);
  Var logits = apply(net, params, xv);
  Var nat = loss.needs_natural() ? tape.constant(natural_logits) : Var{};
  Var rows = loss.rows(logits, y, nat);
  Probe p;
  p.grad = tape.backward(sum(rows)).of(xv);
  p.loss = rows.value();
  p.pred = argmax_rows(logits.value());
  return p;
}

Tensor loss_values(const Loss& loss, const Tensor& logits, std::span<const int> y, const Tensor& natural_logits) {
  Tape tape;
  Var nat = loss.needs_natural() ? tape.constant(natural_logits) : Var{};
  return loss.rows(tape.constant(logits), y, nat).value();
}

Real mean_of(const Tensor& t) {
  return t.size() ? std::accumulate(t.data().begin(), t.data().end(), 0.0) / static_cast<Real>(t.size()) : 0.0;
}

// Per-row best-iterate bookkeeping: misclassifying beats not, then higher loss.
struct BestTracker {
  Tensor delta;
  std::vector<bool> success;
  std::vector<Real> loss;

  explicit BestTracker(const Shape& shape)
      : delta(shape), success(shape[0], false), loss(shape[0], -std::numeric_limits<Real>::infinity()) {}

  void offer(const Tensor& d, const Tensor& l, std::span<const int> pred, std::span<const int> y) {
    const auto cols = d.cols();
    for (std::size_t i = 0; i < success.size(); ++i) {
      const bool s = pred[i] != y[i];
      if ((s && !success[i]) || (s == success[i] && l[i] > loss[i])) {
        success[i] = s;
        loss[i] = l[i];
        std::copy_n(&d.storage()[i * cols], cols, &delta.storage()[i * cols]);
      }
    }
  }
};

Tensor uniform_start(const Tensor& x, const ThreatModel& tm, Rng& rng) {
  std::uniform_real_distribution<Real> u(-tm.epsilon, tm.epsilon);
  Tensor d(x.shape());
  for (auto& v : d.data()) v = u(rng);
  tm.project(x, d);
  return d;
}

void split_conditioning(const Tensor& cond, std::size_t d, Tensor& x, Tensor& g1, Tensor& g2) {
  const auto rows = cond.rows();
  x = Tensor({rows, d});
  g1 = Tensor({rows, d});
  g2 = Tensor({rows, d});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      x.at(i, j) = cond.at(i, j);
      g1.at(i, j) = cond.at(i, d + j);
      g2.at(i, j) = cond.at(i, 2 * d + j);
    }
}

AdvResult finish(const Network& net, const Tensor& x, std::span<const int> y, Tensor delta,
                 const ThreatModel& tm) {
  tm.project(x, delta);
  AdvResult r;
  r.success = misclassified(net, plus(x, delta), y);
  r.delta = std::move(delta);
  return r;
}

}  // namespace

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::iterative: return "iterative";
    case AttackKind::spsa: return "spsa";
    case AttackKind::feature: return "feature";
    case AttackKind::dist_exp: return "dist_exp";
    case AttackKind::dist_amortized: return "dist_amortized";
  }
  return "?";
}

AttackKind attack_kind_from_string(const std::string& s) {
  for (auto k : {AttackKind::fgsm, AttackKind::iterative, AttackKind::spsa, AttackKind::feature, AttackKind::dist_exp,
                 AttackKind::dist_amortized}) {
    if (to_string(k) == s) return k;
  }
  throw InvalidArgument("unknown attack kind '" + s + "'");
}

std::size_t AdvResult::successes() const { return static_cast<std::size_t>(std::count(success.begin(), success.end(), true)); }

AttackSpec AttackSpec::fgsm() {
  AttackSpec s;
  s.kind = AttackKind::fgsm;
  s.name = "fgsm";
  s.steps = 1;
  s.random_start = false;
  return s;
}

AttackSpec AttackSpec::pgd(std::size_t steps) {
  AttackSpec s;
  s.name = "pgd-" + std::to_string(steps);
  s.steps = steps;
  return s;
}

AttackSpec AttackSpec::mim(std::size_t steps) {
  AttackSpec s = pgd(steps);
  s.name = "mim-" + std::to_string(steps);
  s.momentum_decay = 1.0;
  return s;
}

AttackSpec AttackSpec::cw(std::size_t steps) {
  AttackSpec s = pgd(steps);
  s.name = "cw-" + std::to_string(steps);
  s.loss = Loss{LossKind::cw_margin};
  return s;
}

AttackSpec AttackSpec::spsa_default() {
  AttackSpec s;
  s.kind = AttackKind::spsa;
  s.name = "spsa";
  s.loss = Loss{LossKind::cw_margin};
  s.random_start = false;
  s.steps = s.spsa.iters;
  return s;
}

AttackSpec AttackSpec::feature_default() {
  AttackSpec s;
  s.kind = AttackKind::feature;
  s.name = "feature";
  s.steps = s.feature.steps;
  return s;
}

AttackSpec AttackSpec::dist_exp_default() {
  AttackSpec s;
  s.kind = AttackKind::dist_exp;
  s.name = "dist_exp";
  s.steps = s.dist.steps;
  return s;
}

AttackSpec AttackSpec::dist_amortized_default() {
  AttackSpec s;
  s.kind = AttackKind::dist_amortized;
  s.name = "dist_amortized";
  s.steps = 1;
  return s;
}

void AttackSpec::validate() const {
  auto fail = [&](const std::string& what) { throw InvalidArgument("attack '" + name + "': " + what); };
  if (epsilon && !(*epsilon > 0)) fail("epsilon must be positive");
  if (step_size < 0 || !std::isfinite(step_size)) fail("step_size must be positive (0 selects the default)");
  if (steps < 1) fail("steps must be at least 1");
  if (restarts < 1) fail("restarts must be at least 1");
  if (momentum_decay < 0) fail("momentum_decay must be nonnegative");
  if (loss.kind == LossKind::trades && !(loss.beta > 0)) fail("trades beta must be positive");
  if (kind == AttackKind::spsa) {
    if (spsa.batch < 1 || spsa.iters < 1) fail("spsa batch and iters must be at least 1");
    if (!(spsa.perturb_size > 0) || !(spsa.lr > 0)) fail("spsa perturb_size and lr must be positive");
  }
  if (kind == AttackKind::feature) {
    if (feature.num_targets < 1 || feature.steps < 1) fail("feature num_targets and steps must be at least 1");
    if (feature.step_size < 0) fail("feature step_size must be nonnegative");
  }
  if (kind == AttackKind::dist_exp) {
    if (dist.steps < 1 || dist.samples < 1) fail("dist steps and samples must be at least 1");
    if (dist.lambda < 0) fail("dist lambda must be nonnegative");
    if (!(dist.lr > 0)) fail("dist lr must be positive");
    if (dist.antithetic && dist.samples % 2) fail("antithetic sampling needs an even sample count");
  }
}

ThreatModel AttackSpec::threat(const ThreatModel& tm) const {
  ThreatModel t = tm;
  if (epsilon) t.epsilon = *epsilon;
  t.validate();
  return t;
}

Real AttackSpec::resolved_step(const ThreatModel& tm) const {
  const Real eps = threat(tm).epsilon;
  if (kind == AttackKind::feature) return feature.step_size > 0 ? feature.step_size : eps / 8;
  if (kind == AttackKind::fgsm) return eps;
  return step_size > 0 ? step_size : eps / 4;
}

Real sign(Real v) { return static_cast<Real>((v > 0) - (v < 0)); }

std::vector<bool> misclassified(const Network& net, const Tensor& x_adv, std::span<const int> y) {
  auto pred = predict(net, x_adv);
  std::vector<bool> out(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) out[i] = pred[i] != y[i];
  return out;
}

AdvResult fgsm(const Network& net, const Tensor& x, std::span<const int> y, const ThreatModel& tm, const Loss& loss) {
  tm.validate();
  const Tensor xm = as_matrix(x);
  check_batch(xm, y, net, "fgsm");
  const Tensor natural = loss.needs_natural() ? infer(net, xm) : Tensor{};
  auto p = probe(net, xm, y, loss, natural);
  Tensor delta(xm.shape());
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = tm.epsilon * sign(p.grad[i]);
  AdvResult r = finish(net, xm, y, std::move(delta), tm);
  r.loss_trace = {mean_of(p.loss), mean_of(loss_values(loss, infer(net, plus(xm, r.delta)), y, natural))};
  return r;
}

AdvResult targeted_fgsm(const Network& net, const Tensor& x, std::span<const int> targets, std::span<const int> y,
                        const ThreatModel& tm) {
  tm.validate();
  const Tensor xm = as_matrix(x);
  check_batch(xm, y, net, "targeted_fgsm");
  if (targets.size() != y.size()) throw InvalidArgument("targeted_fgsm: one target per row");
  auto p = probe(net, xm, targets, Loss{}, Tensor{});
  Tensor delta(xm.shape());
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = -tm.epsilon * sign(p.grad[i]);
  AdvResult r = finish(net, xm, y, std::move(delta), tm);
  r.loss_trace = {mean_of(p.loss)};
  return r;
}

AdvResult iterative_attack(const Network& net, const Tensor& x, std::span<const int> y, const ThreatModel& tm,
                           const AttackSpec& spec, Rng& rng) {
  spec.validate();
  const ThreatModel t = spec.threat(tm);
  const Real alpha = spec.resolved_step(t);
  const Tensor xm = as_matrix(x);
  check_batch(xm, y, net, "iterative_attack");
  const Tensor natural = spec.loss.needs_natural() ? infer(net, xm) : Tensor{};
  const auto base = rng();
  const auto rows = xm.rows(), cols = xm.cols();
  BestTracker best(xm.shape());
  AdvResult out;
  for (std::size_t r = 0; r < spec.restarts; ++r) {
    Rng rr = make_rng(base, r);
    Tensor delta = spec.random_start ? uniform_start(xm, t, rr) : Tensor(xm.shape());
    Tensor acc(xm.shape());
    for (std::size_t s = 0;; ++s) {
      auto p = probe(net, plus(xm, delta), y, spec.loss, natural);
      best.offer(delta, p.loss, p.pred, y);
      out.loss_trace.push_back(mean_of(p.loss));
      if (s == spec.steps) break;
      const Tensor* dir = &p.grad;
      if (spec.momentum_decay > 0) {
        for (std::size_t i = 0; i < rows; ++i) {
          Real l1 = 0;
          for (std::size_t j = 0; j < cols; ++j) l1 += std::abs(p.grad[i * cols + j]);
          const Real inv = l1 > 0 ? 1.0 / l1 : 0.0;
          for (std::size_t j = 0; j < cols; ++j)
            acc[i * cols + j] = spec.momentum_decay * acc[i * cols + j] + p.grad[i * cols + j] * inv;
        }
        dir = &acc;
      }
      for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += alpha * sign((*dir)[i]);
      t.project(xm, delta);
    }
  }
  out.delta = std::move(best.delta);
  out.success = std::move(best.success);
  return out;
}

QueryModel QueryModel::of(const Network& net) {
  return QueryModel([&net](const Tensor& x) { return infer(net, x); });
}

Tensor QueryModel::logits(const Tensor& x) const {
  queries_ += x.rows();
  return fn_(x);
}

Tensor spsa_gradient(const BatchLossFn& loss, const Tensor& x, Real c, std::size_t batch, Rng& rng) {
  if (!(c > 0) || batch < 1) throw InvalidArgument("spsa_gradient: need c > 0 and batch >= 1");
  const auto d = x.size();
  std::bernoulli_distribution coin(0.5);
  Tensor dirs({batch, d});
  for (auto& v : dirs.data()) v = coin(rng) ? 1.0 : -1.0;
  Tensor pts({2 * batch, d});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < d; ++j) {
      pts.at(2 * b, j) = x[j] + c * dirs.at(b, j);
      pts.at(2 * b + 1, j) = x[j] - c * dirs.at(b, j);
    }
  const Tensor l = loss(pts);
  if (l.size() != 2 * batch) throw InvalidArgument("spsa_gradient: loss must return one value per point");
  Tensor g(x.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const Real diff = (l[2 * b] - l[2 * b + 1]) / (2 * c);
    for (std::size_t j = 0; j < d; ++j) g[j] += diff / dirs.at(b, j);
  }
  for (auto& v : g.data()) v /= static_cast<Real>(batch);
  return g;
}

AdvResult spsa_attack(const QueryModel& model, const Tensor& x, std::span<const int> y, const ThreatModel& tm,
                      const AttackSpec& spec, Rng& rng) {
  spec.validate();
  const ThreatModel t = spec.threat(tm);
  const Tensor xm = as_matrix(x);
  if (y.size() != xm.rows()) throw InvalidArgument("spsa_attack: label count mismatch");
  const auto rows = xm.rows(), d = xm.cols();
  AdvResult out;
  out.delta = Tensor(xm.shape());
  out.success.assign(rows, false);
  Real final_loss = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    const Tensor xi = xm.row_copy(i).reshaped({1, d});
    const int yi[] = {y[i]};
    const Tensor nat = spec.loss.needs_natural() ? model.logits(xi) : Tensor{};
    Tensor delta({1, d});
    OptState adam(OptimizerConfig::adam(spec.spsa.lr, 0.9, 0.999));
    BatchLossFn loss = [&](const Tensor& pts) {
      std::vector<int> ys(pts.rows(), y[i]);
      Tensor nat_rep;
      if (spec.loss.needs_natural()) {
        nat_rep = Tensor({pts.rows(), nat.cols()});
        for (std::size_t r = 0; r < pts.rows(); ++r) std::copy_n(nat.storage().begin(), nat.cols(), nat_rep.row(r).begin());
      }
      return loss_values(spec.loss, model.logits(pts), ys, nat_rep);
    };
    bool hit = false;
    for (std::size_t it = 0; it <= spec.spsa.iters; ++it) {
      const Tensor logits = model.logits(plus(xi, delta));
      if (argmax_rows(logits)[0] != yi[0]) {
        hit = true;
        break;
      }
      if (it == spec.spsa.iters) break;
      Tensor g = spsa_gradient(loss, plus(xi, delta), spec.spsa.perturb_size, spec.spsa.batch, rng);
      Tensor* ps[] = {&delta};
      ascend(ps, std::span<const Tensor>(&g, 1), adam);
      t.project(xi, delta);
    }
    final_loss += loss_values(spec.loss, model.logits(plus(xi, delta)), yi, nat)[0];
    out.success[i] = hit;
    std::copy_n(delta.storage().begin(), d, out.delta.row(i).begin());
  }
  out.loss_trace = {rows ? final_loss / static_cast<Real>(rows) : 0.0};
  return out;
}

AdvResult feature_attack(const Network& net, const Tensor& x, std::span<const int> y, const Tensor& pool_x,
                         std::span<const int> pool_y, const ThreatModel& tm, const AttackSpec& spec, Rng& rng) {
  spec.validate();
  const ThreatModel t = spec.threat(tm);
  const Tensor xm = as_matrix(x);
  check_batch(xm, y, net, "feature_attack");
  if (net.depth() < 2) throw InvalidArgument("feature_attack: network has no hidden feature layer");
  if (pool_x.rank() != 2 || pool_x.rows() != pool_y.size() || pool_x.cols() != xm.cols()) {
    throw InvalidArgument("feature_attack: pool shape mismatch");
  }
  const Real alpha = spec.resolved_step(t);
  const auto rows = xm.rows(), cols = xm.cols();
  const std::size_t feat_layers = net.depth() - 1;
  const Tensor pool_feats = infer(net, pool_x, feat_layers);
  const auto h = pool_feats.cols();

  std::vector<std::uint64_t> bases(rows);
  std::vector<std::vector<std::size_t>> targets(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    bases[i] = rng();
    std::vector<std::size_t> cand;
    for (std::size_t p = 0; p < pool_y.size(); ++p)
      if (pool_y[p] != y[i]) cand.push_back(p);
    if (cand.empty()) throw InvalidArgument("feature_attack: pool has no example of a class other than " + std::to_string(y[i]));
    Rng order = make_rng(bases[i], 0);
    std::shuffle(cand.begin(), cand.end(), order);
    cand.resize(std::min(cand.size(), spec.feature.num_targets));
    targets[i] = std::move(cand);
  }

  AdvResult out;
  out.delta = Tensor(xm.shape());
  out.success.assign(rows, false);
  std::vector<Real> best_cos(rows, std::numeric_limits<Real>::infinity());
  for (std::size_t k = 0; k < spec.feature.num_targets; ++k) {
    Tensor tf({rows, h});
    Tensor delta(xm.shape());
    std::vector<bool> active(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      active[i] = k < targets[i].size() && !out.success[i];
      if (!active[i]) continue;
      std::copy_n(pool_feats.row(targets[i][k]).begin(), h, tf.row(i).begin());
      if (spec.random_start) {
        Rng rr = make_rng(bases[i], k + 1);
        std::uniform_real_distribution<Real> u(-t.epsilon, t.epsilon);
        for (auto& v : delta.row(i)) v = u(rr);
      }
    }
    if (std::none_of(active.begin(), active.end(), [](bool a) { return a; })) break;
    t.project(xm, delta);
    Real trace = 0;
    for (std::size_t s = 0;; ++s) {
      Tape tape;
      Var xv = tape.leaf(plus(xm, delta));
      auto params = bind_parameters(net, tape, ParamMode::constants);
      Var cos = cosine_rows(apply(net, params, xv, feat_layers), tape.constant(tf));
      const auto pred = predict(net, xv.value());
      trace = 0;
      for (std::size_t i = 0; i < rows; ++i) {
        if (!active[i]) continue;
        const Real c = cos.value()[i];
        trace += c;
        const bool hit = pred[i] != y[i];
        if (hit || c < best_cos[i]) {
          std::copy_n(delta.row(i).begin(), cols, out.delta.row(i).begin());
          best_cos[i] = c;
        }
        if (hit) {
          out.success[i] = true;
          active[i] = false;
        }
      }
      out.loss_trace.push_back(trace / static_cast<Real>(rows));
      if (s == spec.feature.steps) break;
      const Tensor g = tape.backward(sum(cos)).of(xv);
      for (std::size_t i = 0; i < rows; ++i) {
        if (!active[i]) continue;
        for (std::size_t j = 0; j < cols; ++j) delta.at(i, j) -= alpha * sign(g.at(i, j));
      }
      t.project(xm, delta);
    }
  }
  return out;
}

DistAttackResult dist_attack_exp(const Network& net, const Tensor& x, std::span<const int> y, const ThreatModel& tm,
                                 const AttackSpec& spec, Rng& rng) {
  spec.validate();
  const ThreatModel t = spec.threat(tm);
  const Tensor xm = as_matrix(x);
  check_batch(xm, y, net, "dist_attack_exp");
  const auto& o = spec.dist;
  DistAttackResult res{TanhGaussianParams::initial(xm.rows(), xm.cols()), {}};
  OptState adam(OptimizerConfig::adam(o.lr, 0.0, 0.0));
  const McOptions mc{o.samples, o.lambda, o.antithetic};
  for (std::size_t s = 0; s < o.steps; ++s) {
    auto est = inner_objective_exp(net, xm, y, res.params, t, spec.loss, mc, rng);
    res.adv.loss_trace.push_back(mean_of(est.j));
    Tensor* ps[] = {&res.params.mu, &res.params.sigma_raw};
    const Tensor gs[] = {est.grad_mu, est.grad_sigma_raw};
    ascend(ps, gs, adam);
    res.params.clip();
  }
  const Tensor natural = spec.loss.needs_natural() ? infer(net, xm) : Tensor{};
  BestTracker best(xm.shape());
  for (std::size_t s = 0; s < o.samples; ++s) {
    Tensor delta = sample_explicit(res.params, t, rng).delta;
    t.project(xm, delta);
    const Tensor logits = infer(net, plus(xm, delta));
    best.offer(delta, loss_values(spec.loss, logits, y, natural), argmax_rows(logits), y);
  }
  res.adv.delta = std::move(best.delta);
  res.adv.success = std::move(best.success);
  return res;
}

AdvResult dist_attack_amortized(const ExplicitGenerator& gen, const Network& net, const Tensor& x,
                                std::span<const int> y, const ThreatModel& tm, Rng& rng) {
  if (!gen.trained) throw InvalidArgument("dist_attack_amortized: generator has not been trained");
  const Tensor xm = as_matrix(x);
  check_batch(xm, y, net, "dist_attack_amortized");
  Tensor xs, g1, g2;
  split_conditioning(conditioning_input(net, xm, y, tm), xm.cols(), xs, g1, g2);
  auto params = amortized_explicit_params(gen, xs, g1, g2, tm);
  return finish(net, xm, y, sample_explicit(params, tm, rng).delta, tm);
}

AdvResult dist_attack_amortized(const ImplicitSampler& s, const Network& net, const Tensor& x, std::span<const int> y,
                                const ThreatModel& tm, Rng& rng) {
  if (!s.trained) throw InvalidArgument("dist_attack_amortized: generator has not been trained");
  const Tensor xm = as_matrix(x);
  check_batch(xm, y, net, "dist_attack_amortized");
  Tensor xs, g1, g2;
  split_conditioning(conditioning_input(net, xm, y, tm), xm.cols(), xs, g1, g2);
  return finish(net, xm, y, sample_implicit(s, xs, g1, g2, tm, rng).delta, tm);
}

AdvResult run_attack(const Network& net, const Tensor& x, std::span<const int> y, const ThreatModel& tm,
                     const AttackSpec& spec, Rng& rng, const AttackContext& ctx) {
  spec.validate();
  switch (spec.kind) {
    case AttackKind::fgsm: return fgsm(net, x, y, spec.threat(tm), spec.loss);
    case AttackKind::iterative: return iterative_attack(net, x, y, tm, spec, rng);
    case AttackKind::spsa: return spsa_attack(QueryModel::of(net), x, y, tm, spec, rng);
    case AttackKind::feature:
      if (!ctx.pool_x) throw InvalidArgument("feature attack needs a target pool");
      return feature_attack(net, x, y, *ctx.pool_x, ctx.pool_y, tm, spec, rng);
    case AttackKind::dist_exp: return dist_attack_exp(net, x, y, tm, spec, rng).adv;
    case AttackKind::dist_amortized:
      if (ctx.explicit_gen) return dist_attack_amortized(*ctx.explicit_gen, net, x, y, spec.threat(tm), rng);
      if (ctx.implicit_gen) return dist_attack_amortized(*ctx.implicit_gen, net, x, y, spec.threat(tm), rng);
      throw InvalidArgument("dist_amortized attack needs a trained generator");
  }
  throw InvalidArgument("unknown attack kind");
}

}  // namespace adt
