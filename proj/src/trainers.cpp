#include "adt/trainers.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "adt/error.hpp"

namespace adt {

namespace {

Real mean_of(const Tensor& t) {
  return std::accumulate(t.data().begin(), t.data().end(), 0.0) / static_cast<Real>(t.size());
}

std::vector<Tensor> grads_for(const Gradients& g, const std::vector<Var>& vars) {
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (const auto& v : vars) out.push_back(g.of(v));
  return out;
}

void sigma_stats(StepRecord& r, const Tensor& sigma) {
  r.sigma_mean = mean_of(sigma);
  r.sigma_min = *std::min_element(sigma.data().begin(), sigma.data().end());
  r.sigma_max = *std::max_element(sigma.data().begin(), sigma.data().end());
}

Var perturbed_input(Tape& tape, const Tensor& x, Var delta, const ThreatModel& tm) {
  Var xa = add(tape.constant(x), delta);
  if (tm.pixel_box) xa = clamp(xa, tm.pixel_box->first, tm.pixel_box->second);
  return xa;
}

struct Trainer {
  const TrainSpec& spec;
  TrainResult& res;
  Rng rng;
  OptState cls, gen, post;

  Trainer(const TrainSpec& s, TrainResult& r)
      : spec(s),
        res(r),
        rng(make_rng(s.seed, 3)),
        cls(s.classifier),
        gen(s.generator),
        post(s.posterior) {}

  // One descent step on the mean of loss.rows over (x + delta).
  StepRecord classifier_step(const Tensor& x, const Tensor& x_adv, std::span<const int> y) {
    Tape tape;
    auto np = bind_parameters(res.net, tape, ParamMode::leaves);
    Var logits = apply(res.net, np, tape.constant(x_adv));
    Var nat = spec.loss.needs_natural() ? apply(res.net, np, tape.constant(x)) : Var{};
    Var total = mean(spec.loss.rows(logits, y, nat));
    auto g = tape.backward(total);
    auto params = res.net.parameters();
    descend(params, grads_for(g, np), cls);
    StepRecord r;
    r.j = r.loss = total.value().item();
    return r;
  }

  StepRecord standard(const Tensor& x, std::span<const int> y) { return classifier_step(x, x, y); }

  StepRecord at_pgd(const Tensor& x, std::span<const int> y) {
    AttackSpec a = AttackSpec::pgd(spec.pgd_steps);
    a.step_size = spec.pgd_step_size;
    if (spec.loss.kind == LossKind::trades) a.loss = Loss{LossKind::kl_to_natural};
    auto adv = iterative_attack(res.net, x, y, spec.threat, a, rng);
    Tensor xa = x;
    for (std::size_t i = 0; i < xa.size(); ++i) xa[i] += adv.delta[i];
    return classifier_step(x, xa, y);
  }

  StepRecord at_fgsm(const Tensor& x, std::span<const int> y) {
    const Tensor logits = infer(res.net, x);
    std::vector<int> target(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      auto row = logits.row(i);
      target[i] = static_cast<int>(std::min_element(row.begin(), row.end()) - row.begin());
    }
    auto adv = targeted_fgsm(res.net, x, target, y, spec.threat);
    Tensor xa = x;
    for (std::size_t i = 0; i < xa.size(); ++i) xa[i] += adv.delta[i];
    return classifier_step(x, xa, y);
  }

  StepRecord adt_exp(const Tensor& x, std::span<const int> y) {
    const auto& in = spec.inner;
    auto params = TanhGaussianParams::initial(x.rows(), x.cols());
    OptState inner(OptimizerConfig::adam(in.lr, 0.0, 0.0));
    const McOptions mc{in.samples, in.lambda, in.antithetic};
    for (std::size_t t = 0; t < in.steps; ++t) {
      auto est = inner_objective_exp(res.net, x, y, params, spec.threat, spec.loss, mc, rng);
      Tensor* ps[] = {&params.mu, &params.sigma_raw};
      const Tensor gs[] = {est.grad_mu, est.grad_sigma_raw};
      ascend(ps, gs, inner);
      params.clip();
    }
    // Outer step at the converged distribution with fresh samples.
    const Tensor noise = draw_noise(x.rows(), x.cols(), in.samples, in.antithetic, rng);
    Tape tape;
    auto np = bind_parameters(res.net, tape, ParamMode::leaves);
    const Tensor sigma = params.sigma();
    ExplicitObjectiveInput oi;
    oi.net = &res.net;
    oi.net_params = np;
    oi.x = &x;
    oi.labels = y;
    oi.mu = tape.constant(params.mu);
    oi.sigma = tape.constant(sigma);
    oi.noise = &noise;
    oi.samples = in.samples;
    oi.lambda = in.lambda;
    oi.tm = &spec.threat;
    oi.loss = spec.loss;
    auto terms = explicit_objective(tape, oi);
    Var total = mean(terms.j);
    auto g = tape.backward(total);
    auto theta = res.net.parameters();
    descend(theta, grads_for(g, np), cls);
    StepRecord r;
    r.j = total.value().item();
    r.loss = mean_of(terms.loss.value());
    r.entropy = mean_of(terms.entropy.value());
    sigma_stats(r, sigma);
    return r;
  }

  StepRecord adt_exp_am(const Tensor& x, std::span<const int> y) {
    auto& g = *res.explicit_gen;
    const Tensor cond = conditioning_input(res.net, x, y, spec.threat);
    const Tensor noise = draw_noise(x.rows(), x.cols(), 1, false, rng);
    Tape tape;
    auto np = bind_parameters(res.net, tape, ParamMode::leaves);
    auto gp = bind_parameters(g.net, tape, ParamMode::leaves);
    auto heads = explicit_heads(g, gp, tape.constant(cond));
    ExplicitObjectiveInput oi;
    oi.net = &res.net;
    oi.net_params = np;
    oi.x = &x;
    oi.labels = y;
    oi.mu = heads.mu;
    oi.sigma = heads.sigma;
    oi.noise = &noise;
    oi.samples = 1;
    oi.lambda = spec.inner.lambda;
    oi.tm = &spec.threat;
    oi.loss = spec.loss;
    auto terms = explicit_objective(tape, oi);
    Var total = mean(terms.j);
    auto grads = tape.backward(total);
    auto theta = res.net.parameters();
    auto phi = g.net.parameters();
    descend(theta, grads_for(grads, np), cls);
    ascend(phi, grads_for(grads, gp), gen);
    StepRecord r;
    r.j = total.value().item();
    r.loss = mean_of(terms.loss.value());
    r.entropy = mean_of(terms.entropy.value());
    sigma_stats(r, heads.sigma.value());
    return r;
  }

  StepRecord adt_imp_am(const Tensor& x, std::span<const int> y) {
    auto& s = *res.implicit_gen;
    auto& q = *res.posterior;
    const Tensor cond = conditioning_input(res.net, x, y, spec.threat);
    const Tensor z = draw_latent(x.rows(), s.z_dim, rng);
    Tape tape;
    auto np = bind_parameters(res.net, tape, ParamMode::leaves);
    auto gp = bind_parameters(s.generator, tape, ParamMode::leaves);
    auto qp = bind_parameters(q.q_net, tape, ParamMode::leaves);
    Var zv = tape.constant(z);
    Var delta = implicit_delta(s, gp, zv, tape.constant(cond), spec.threat.epsilon);
    Var logits = apply(res.net, np, perturbed_input(tape, x, delta, spec.threat));
    Var nat = spec.loss.needs_natural() ? apply(res.net, np, tape.constant(x)) : Var{};
    Var loss = mean(spec.loss.rows(logits, y, nat));
    Var bound = mean(entropy_lower_bound_rows(q, qp, zv, delta));
    Var total = add(loss, scale(bound, spec.inner.lambda));
    auto grads = tape.backward(total);
    auto theta = res.net.parameters();
    auto phi = s.generator.parameters();
    auto psi = q.q_net.parameters();
    descend(theta, grads_for(grads, np), cls);
    ascend(phi, grads_for(grads, gp), gen);
    ascend(psi, grads_for(grads, qp), post);
    StepRecord r;
    r.j = total.value().item();
    r.loss = loss.value().item();
    r.entropy = bound.value().item();
    return r;
  }

  StepRecord step(const Tensor& x, std::span<const int> y) {
    switch (spec.method) {
      case TrainMethod::standard: return standard(x, y);
      case TrainMethod::at_fgsm: return at_fgsm(x, y);
      case TrainMethod::at_pgd: return at_pgd(x, y);
      case TrainMethod::adt_exp: return adt_exp(x, y);
      case TrainMethod::adt_exp_am: return adt_exp_am(x, y);
      case TrainMethod::adt_imp_am: return adt_imp_am(x, y);
    }
    throw InvalidArgument("unknown training method");
  }
};

}  // namespace

std::string to_string(TrainMethod m) {
  switch (m) {
    case TrainMethod::standard: return "standard";
    case TrainMethod::at_fgsm: return "at_fgsm";
    case TrainMethod::at_pgd: return "at_pgd";
    case TrainMethod::adt_exp: return "adt_exp";
    case TrainMethod::adt_exp_am: return "adt_exp_am";
    case TrainMethod::adt_imp_am: return "adt_imp_am";
  }
  return "?";
}

TrainMethod train_method_from_string(const std::string& s) {
  for (auto m : {TrainMethod::standard, TrainMethod::at_fgsm, TrainMethod::at_pgd, TrainMethod::adt_exp,
                 TrainMethod::adt_exp_am, TrainMethod::adt_imp_am})
    if (to_string(m) == s) return m;
  throw InvalidArgument("unknown training method '" + s + "'");
}

void TrainSpec::validate() const {
  threat.validate();
  if (loss.kind != LossKind::cross_entropy && loss.kind != LossKind::trades)
    throw InvalidArgument("train.loss must be cross_entropy or trades");
  if (loss.kind == LossKind::trades && !(loss.beta > 0)) throw InvalidArgument("train.beta must be positive");
  if (epochs < 1) throw InvalidArgument("train.epochs must be at least 1");
  if (batch_size < 1) throw InvalidArgument("train.batch_size must be at least 1");
  if (!(classifier.lr > 0)) throw InvalidArgument("train.lr must be positive");
  if (!(lr_decay > 0)) throw InvalidArgument("train.lr_decay must be positive");
  if (inner.lambda < 0) throw InvalidArgument("train.lambda must be nonnegative");
  if (inner.steps < 1) throw InvalidArgument("train.inner_steps must be at least 1");
  if (inner.samples < 1) throw InvalidArgument("train.samples must be at least 1");
  if (inner.antithetic && inner.samples % 2) throw InvalidArgument("train.samples must be even with antithetic noise");
  if (!(inner.lr > 0)) throw InvalidArgument("train.inner_lr must be positive");
  if (pgd_steps < 1) throw InvalidArgument("train.pgd_steps must be at least 1");
  if (pgd_step_size < 0) throw InvalidArgument("train.pgd_step_size must be nonnegative");
  if (z_dim < 1) throw InvalidArgument("train.z_dim must be at least 1");
  if (!(generator.lr > 0) || !(posterior.lr > 0)) throw InvalidArgument("train.generator_lr must be positive");
}

void RunLog::append(StepRecord r) {
  if (!records_.empty() && r.step <= records_.back().step) throw InvalidArgument("run log steps must increase");
  records_.push_back(std::move(r));
}

void RunLog::write_jsonl(std::ostream& os) const {
  for (const auto& r : records_) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["batch"] = r.batch;
    j["j"] = r.j;
    j["loss"] = r.loss;
    if (r.entropy) j["entropy"] = *r.entropy;
    if (r.sigma_mean) {
      j["sigma_mean"] = *r.sigma_mean;
      j["sigma_min"] = *r.sigma_min;
      j["sigma_max"] = *r.sigma_max;
    }
    j["wall_ms"] = r.wall_ms;
    os << j.dump() << '\n';
  }
}

bool RunLog::same_trajectory(const RunLog& o) const {
  if (records_.size() != o.records_.size()) return false;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto &a = records_[i], &b = o.records_[i];
    if (a.step != b.step || a.epoch != b.epoch || a.batch != b.batch || a.j != b.j || a.loss != b.loss ||
        a.entropy != b.entropy || a.sigma_mean != b.sigma_mean || a.sigma_min != b.sigma_min ||
        a.sigma_max != b.sigma_max)
      return false;
  }
  return true;
}

Real RunLog::epoch_mean(Real StepRecord::*field, std::optional<std::size_t> epoch) const {
  if (records_.empty()) throw InvalidArgument("run log is empty");
  const auto e = epoch.value_or(records_.back().epoch);
  Real s = 0;
  std::size_t n = 0;
  for (const auto& r : records_)
    if (r.epoch == e) {
      s += r.*field;
      ++n;
    }
  if (n == 0) throw InvalidArgument("run log has no records for epoch " + std::to_string(e));
  return s / static_cast<Real>(n);
}

Real RunLog::epoch_mean_entropy(std::optional<std::size_t> epoch) const {
  if (records_.empty()) throw InvalidArgument("run log is empty");
  const auto e = epoch.value_or(records_.back().epoch);
  Real s = 0;
  std::size_t n = 0;
  for (const auto& r : records_)
    if (r.epoch == e && r.entropy) {
      s += *r.entropy;
      ++n;
    }
  if (n == 0) throw InvalidArgument("run log has no entropy records for epoch " + std::to_string(e));
  return s / static_cast<Real>(n);
}

Network make_classifier(const TrainSpec& spec, std::size_t input_dim, std::size_t classes) {
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
  dims.push_back(classes);
  Rng rng = make_rng(spec.seed, 1);
  return Network::mlp(dims, Activation::relu, Activation::identity, rng);
}

TrainResult train(const TrainSpec& spec, const Dataset& data, const Network* init) {
  spec.validate();
  data.validate();
  if (data.classes < 2) throw InvalidArgument("training needs at least two classes");
  TrainResult res;
  res.net = init ? *init : make_classifier(spec, data.dim(), data.classes);
  if (res.net.input_dim() != data.dim() || res.net.output_dim() != data.classes) {
    throw InvalidArgument("classifier shape does not match the dataset");
  }
  const auto d = data.dim();
  if (spec.method == TrainMethod::adt_exp_am) {
    Rng g = make_rng(spec.seed, 4);
    res.explicit_gen = ExplicitGenerator::create(d, spec.generator_hidden, g);
  }
  if (spec.method == TrainMethod::adt_imp_am) {
    Rng g = make_rng(spec.seed, 4), q = make_rng(spec.seed, 5);
    res.implicit_gen = ImplicitSampler::create(d, spec.z_dim, spec.generator_hidden, g);
    res.posterior = VariationalPosterior::create(d, spec.z_dim, spec.generator_hidden, q);
  }
  Trainer tr(spec, res);
  Rng order = make_rng(spec.seed, 2);
  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    const auto decays = std::count_if(spec.lr_milestones.begin(), spec.lr_milestones.end(),
                                      [&](std::size_t m) { return m <= epoch; });
    tr.cls.config.lr = spec.classifier.lr * std::pow(spec.lr_decay, static_cast<Real>(decays));
    std::shuffle(perm.begin(), perm.end(), order);
    std::size_t batch = 0;
    for (std::size_t start = 0; start < perm.size(); start += spec.batch_size, ++batch) {
      const auto end = std::min(perm.size(), start + spec.batch_size);
      std::span<const std::size_t> idx(perm.data() + start, end - start);
      const Dataset b = data.subset(idx);
      const auto t0 = std::chrono::steady_clock::now();
      StepRecord r = tr.step(b.features, b.labels);
      r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      r.step = step++;
      r.epoch = epoch;
      r.batch = batch;
      res.log.append(r);
    }
  }
  if (res.explicit_gen) res.explicit_gen->trained = true;
  if (res.implicit_gen) res.implicit_gen->trained = true;
  return res;
}

Real objective_j(const Network& net, const Tensor& x, std::span<const int> y, const TanhGaussianParams& dist,
                 const ThreatModel& tm, const Loss& loss, Real lambda, std::size_t k, Rng& rng) {
  tm.validate();
  if (k < 1) throw InvalidArgument("objective_j: k must be at least 1");
  const Tensor noise = draw_noise(x.rows(), x.cols(), k, false, rng);
  Tape tape;
  auto np = bind_parameters(net, tape, ParamMode::constants);
  ExplicitObjectiveInput in;
  in.net = &net;
  in.net_params = np;
  in.x = &x;
  in.labels = y;
  in.mu = tape.constant(dist.mu);
  in.sigma = tape.constant(dist.sigma());
  in.noise = &noise;
  in.samples = k;
  in.lambda = lambda;
  in.tm = &tm;
  in.loss = loss;
  return mean(explicit_objective(tape, in).j).value().item();
}

Real objective_j(const Network& net, const Tensor& x, std::span<const int> y, const ImplicitSampler& sampler,
                 const VariationalPosterior& q, const ThreatModel& tm, const Loss& loss, Real lambda, std::size_t k,
                 Rng& rng) {
  tm.validate();
  if (k < 1) throw InvalidArgument("objective_j: k must be at least 1");
  const Tensor cond = conditioning_input(net, x, y, tm);
  Real total = 0;
  for (std::size_t s = 0; s < k; ++s) {
    Tape tape;
    auto np = bind_parameters(net, tape, ParamMode::constants);
    auto gp = bind_parameters(sampler.generator, tape, ParamMode::constants);
    auto qp = bind_parameters(q.q_net, tape, ParamMode::constants);
    Var zv = tape.constant(draw_latent(x.rows(), sampler.z_dim, rng));
    Var delta = implicit_delta(sampler, gp, zv, tape.constant(cond), tm.epsilon);
    Var logits = apply(net, np, perturbed_input(tape, x, delta, tm));
    Var nat = loss.needs_natural() ? apply(net, np, tape.constant(x)) : Var{};
    Var l = mean(loss.rows(logits, y, nat));
    Var b = mean(entropy_lower_bound_rows(q, qp, zv, delta));
    total += l.value().item() + lambda * b.value().item();
  }
  return total / static_cast<Real>(k);
}

Real trades_objective(const Network& net, const Tensor& x, std::span<const int> y, const Tensor& delta, Real beta) {
  if (!(beta > 0)) throw InvalidArgument("trades_objective: beta must be positive");
  if (delta.shape() != x.shape()) throw InvalidArgument("trades_objective: delta shape mismatch");
  Tensor xa = x;
  for (std::size_t i = 0; i < xa.size(); ++i) xa[i] += delta[i];
  Tape tape;
  auto np = bind_parameters(net, tape, ParamMode::constants);
  Var nat = apply(net, np, tape.constant(x));
  Var adv = apply(net, np, tape.constant(xa));
  return mean(Loss{LossKind::trades, beta}.rows(adv, y, nat)).value().item();
}

namespace {

constexpr char kMagic[8] = {'A', 'D', 'T', 'S', 'N', 'A', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_f64(std::vector<unsigned char>& b, double v) {
  const auto u = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<unsigned char>(u >> (8 * i)));
}

struct Reader {
  const std::vector<unsigned char>& b;
  std::size_t off = 0;

  void need(std::size_t n) const {
    if (off + n > b.size()) throw IoError("snapshot is truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[off + i]} << (8 * i);
    off += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[off + i]} << (8 * i);
    off += 8;
    return std::bit_cast<double>(v);
  }
};

}  // namespace

std::vector<unsigned char> snapshot_bytes(const Network& net) {
  std::vector<unsigned char> b(kMagic, kMagic + 8);
  put_u32(b, kVersion);
  put_u32(b, static_cast<std::uint32_t>(net.depth()));
  for (const auto& l : net.layers()) {
    put_u32(b, static_cast<std::uint32_t>(l.in_dim()));
    put_u32(b, static_cast<std::uint32_t>(l.out_dim()));
    put_u32(b, static_cast<std::uint32_t>(l.activation));
  }
  for (const auto& l : net.layers()) {
    for (Real v : l.weight.data()) put_f64(b, v);
    for (Real v : l.bias.data()) put_f64(b, v);
  }
  return b;
}

Network snapshot_from_bytes(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw IoError("not a snapshot (bad magic)");
  Reader r{bytes, 8};
  const auto version = r.u32();
  if (version != kVersion) throw IoError("unsupported snapshot version " + std::to_string(version));
  const auto depth = r.u32();
  if (depth == 0 || depth > 1024) throw IoError("snapshot layer count out of range");
  std::vector<DenseLayer> layers(depth);
  for (auto& l : layers) {
    const auto in = r.u32(), out = r.u32(), act = r.u32();
    if (act > static_cast<std::uint32_t>(Activation::identity)) throw IoError("snapshot has an unknown activation");
    if (static_cast<std::uint64_t>(in) * out > (bytes.size() / 8)) throw IoError("snapshot is truncated");
    l.weight = Tensor({in, out});
    l.bias = Tensor({out});
    l.activation = static_cast<Activation>(act);
  }
  for (auto& l : layers) {
    for (auto& v : l.weight.data()) v = r.f64();
    for (auto& v : l.bias.data()) v = r.f64();
  }
  if (r.off != bytes.size()) throw IoError("snapshot has trailing bytes");
  try {
    return Network(std::move(layers));
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("snapshot: ") + e.what());
  }
}

void save_snapshot(const Network& net, const std::filesystem::path& path) {
  const auto b = snapshot_bytes(net);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Network load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> b{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return snapshot_from_bytes(b);
}

}  // namespace adt
