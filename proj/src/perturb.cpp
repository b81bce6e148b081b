#include "adt/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "adt/error.hpp"

namespace adt {

namespace {

const Real kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

Tensor as_matrix(const Tensor& t) { return t.rank() == 2 ? t : t.reshaped({t.rows(), t.cols()}); }

std::size_t samples_per_row(const Tensor& noise, std::size_t rows, const char* who) {
  if (rows == 0 || noise.rows() % rows != 0) {
    throw InvalidArgument(std::string(who) + ": noise rows must be a multiple of the parameter rows");
  }
  return noise.rows() / rows;
}

// Aggregates a per-sample vector (rows*k) into per-row weighted sums.
Var weighted_rows(Var per_sample, std::size_t rows, std::size_t k, std::span<const Real> weights) {
  Tape& tape = per_sample.tape();
  Tensor w({rows, k});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t s = 0; s < k; ++s) w[i * k + s] = weights.empty() ? 1.0 / static_cast<Real>(k) : weights[s];
  return row_sum(mul(reshape(per_sample, {rows, k}), tape.constant(std::move(w))));
}

}  // namespace

void ThreatModel::validate() const {
  if (!(epsilon > 0) || !std::isfinite(epsilon)) {
    throw InvalidArgument("threat_model.epsilon must be positive, got " + std::to_string(epsilon));
  }
  if (pixel_box && !(pixel_box->first < pixel_box->second)) {
    throw InvalidArgument("threat_model.pixel_box requires lo < hi");
  }
}

void ThreatModel::project(const Tensor& x, Tensor& delta) const {
  if (x.shape() != delta.shape()) throw InvalidArgument("project: perturbation shape does not match input");
  for (std::size_t i = 0; i < delta.size(); ++i) {
    Real d = std::clamp(delta[i], -epsilon, epsilon);
    if (pixel_box) d = std::clamp(x[i] + d, pixel_box->first, pixel_box->second) - x[i];
    delta[i] = d;
  }
}

Real softplus(Real x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Real softplus_inverse(Real y) {
  if (!(y > 0)) throw InvalidArgument("softplus_inverse: argument must be positive");
  return y + std::log(-std::expm1(-y));
}

TanhGaussianParams TanhGaussianParams::initial(std::size_t rows, std::size_t dim) {
  return {Tensor({rows, dim}, 0.0), Tensor({rows, dim}, softplus_inverse(1.0))};
}

Tensor TanhGaussianParams::sigma() const {
  Tensor s = sigma_raw;
  for (auto& v : s.data()) v = softplus(v);
  return s;
}

void TanhGaussianParams::clip(const ClipBounds& b) {
  for (auto& v : mu.data()) v = std::clamp(v, -b.mu_max, b.mu_max);
  const Real raw_lo = softplus_inverse(b.sigma_min);
  const Real raw_hi = softplus_inverse(b.sigma_max);
  for (auto& v : sigma_raw.data()) v = std::clamp(v, raw_lo, raw_hi);
}

Tensor draw_noise(std::size_t rows, std::size_t dim, std::size_t samples, bool antithetic, Rng& rng) {
  if (samples == 0) throw InvalidArgument("draw_noise: need at least one sample");
  if (antithetic && samples % 2 != 0) throw InvalidArgument("draw_noise: antithetic sampling needs an even count");
  std::normal_distribution<Real> n01;
  Tensor r({rows * samples, dim});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t s = 0; s < samples; ++s) {
      auto row = r.row(i * samples + s);
      if (antithetic && s % 2 == 1) {
        auto prev = r.row(i * samples + s - 1);
        for (std::size_t j = 0; j < dim; ++j) row[j] = -prev[j];
      } else {
        for (auto& v : row) v = n01(rng);
      }
    }
  }
  return r;
}

ExplicitSample sample_explicit(const TanhGaussianParams& params, const ThreatModel& tm, Rng& rng) {
  tm.validate();
  if (params.mu.shape() != params.sigma_raw.shape()) throw InvalidArgument("sample_explicit: mu/sigma shape mismatch");
  std::normal_distribution<Real> n01;
  const Tensor sigma = params.sigma();
  ExplicitSample out{Tensor(params.mu.shape()), Tensor(params.mu.shape())};
  for (std::size_t i = 0; i < params.mu.size(); ++i) {
    const Real r = n01(rng);
    const Real u = std::clamp(params.mu[i] + sigma[i] * r, -kTanhArgLimit, kTanhArgLimit);
    out.noise[i] = r;
    out.delta[i] = tm.epsilon * std::tanh(u);
  }
  return out;
}

Real neg_log_density(const TanhGaussianParams& params, const ThreatModel& tm, const Tensor& noise) {
  tm.validate();
  if (noise.shape() != params.mu.shape()) throw InvalidArgument("neg_log_density: noise shape does not match params");
  Tape tape;
  const Tensor mu = as_matrix(params.mu);
  auto sigma = softplus(tape.constant(as_matrix(params.sigma_raw)));
  return sum(neg_log_density_rows(tape.constant(mu), sigma, as_matrix(noise), tm.epsilon)).value().item();
}

Var tanh_gaussian_delta(Var mu, Var sigma, const Tensor& noise, Real epsilon) {
  const auto rows = mu.value().rows();
  const auto k = samples_per_row(noise, rows, "tanh_gaussian_delta");
  if (noise.cols() != mu.value().cols() || sigma.shape() != mu.shape()) {
    throw InvalidArgument("tanh_gaussian_delta: shape mismatch");
  }
  Tape& tape = mu.tape();
  Var m = k == 1 ? mu : repeat_rows(mu, k);
  Var s = k == 1 ? sigma : repeat_rows(sigma, k);
  Var u = add(m, mul(s, tape.constant(noise)));
  return scale(adt::tanh(clamp(u, -kTanhArgLimit, kTanhArgLimit)), epsilon);
}

Var neg_log_density_rows(Var mu, Var sigma, const Tensor& noise, Real epsilon) {
  if (!(epsilon > 0)) throw InvalidArgument("neg_log_density: epsilon must be positive");
  const auto rows = mu.value().rows();
  const auto k = samples_per_row(noise, rows, "neg_log_density");
  if (noise.cols() != mu.value().cols() || sigma.shape() != mu.shape()) {
    throw InvalidArgument("neg_log_density: shape mismatch");
  }
  Tape& tape = mu.tape();
  Var m = k == 1 ? mu : repeat_rows(mu, k);
  Var s = k == 1 ? sigma : repeat_rows(sigma, k);
  Var u = add(m, mul(s, tape.constant(noise)));
  Tensor constant(noise.shape());
  const Real log_eps = std::log(epsilon);
  for (std::size_t i = 0; i < noise.size(); ++i) constant[i] = 0.5 * noise[i] * noise[i] + kHalfLog2Pi + log_eps;
  Var per_entry = add(add(adt::log(s), log_sech2(u)), tape.constant(std::move(constant)));
  return row_sum(per_entry);
}

ObjectiveTerms explicit_objective(Tape& tape, const ExplicitObjectiveInput& in) {
  if (!in.net || !in.x || !in.noise || !in.tm) throw InvalidArgument("explicit_objective: missing input");
  const Tensor& x = *in.x;
  const auto rows = x.rows(), k = in.samples;
  if (in.labels.size() != rows) throw InvalidArgument("explicit_objective: label count mismatch");
  if (in.noise->rows() != rows * k) throw InvalidArgument("explicit_objective: noise must have rows * samples rows");
  if (!in.weights.empty() && in.weights.size() != k) throw InvalidArgument("explicit_objective: one weight per sample");
  if (in.lambda < 0) throw InvalidArgument("explicit_objective: lambda must be nonnegative");

  Tensor x_rep({rows * k, x.cols()});
  std::vector<int> y_rep(rows * k);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t s = 0; s < k; ++s) {
      std::copy_n(&x.storage()[i * x.cols()], x.cols(), &x_rep.storage()[(i * k + s) * x.cols()]);
      y_rep[i * k + s] = in.labels[i];
    }
  Var delta = tanh_gaussian_delta(in.mu, in.sigma, *in.noise, in.tm->epsilon);
  Var x_adv = add(tape.constant(x_rep), delta);
  if (in.tm->pixel_box) x_adv = clamp(x_adv, in.tm->pixel_box->first, in.tm->pixel_box->second);
  Var logits = apply(*in.net, in.net_params, x_adv);
  Var natural;
  if (in.loss.needs_natural()) {
    natural = apply(*in.net, in.net_params, tape.constant(x));
    if (k > 1) natural = repeat_rows(natural, k);
  }
  Var loss_s = in.loss.rows(logits, y_rep, natural);
  Var nld_s = neg_log_density_rows(in.mu, in.sigma, *in.noise, in.tm->epsilon);
  ObjectiveTerms t;
  t.loss = weighted_rows(loss_s, rows, k, in.weights);
  t.entropy = weighted_rows(nld_s, rows, k, in.weights);
  t.j = add(t.loss, scale(t.entropy, in.lambda));
  return t;
}

InnerEstimate inner_objective_exp(const Network& net, const Tensor& x, std::span<const int> labels,
                                  const TanhGaussianParams& params, const ThreatModel& tm, const Loss& loss,
                                  const McOptions& mc, Rng& rng) {
  tm.validate();
  if (mc.samples < 1) throw InvalidArgument("inner_objective_exp: k must be at least 1");
  if (mc.lambda < 0) throw InvalidArgument("inner_objective_exp: lambda must be nonnegative");
  const Tensor xm = as_matrix(x);
  const Tensor mu = as_matrix(params.mu);
  if (mu.shape() != xm.shape() || params.sigma_raw.size() != mu.size()) {
    throw InvalidArgument("inner_objective_exp: parameter shape " + shape_string(params.mu.shape()) +
                          " does not match input " + shape_string(x.shape()));
  }
  Tape tape;
  auto net_params = bind_parameters(net, tape, ParamMode::constants);
  Var mu_v = tape.leaf(mu);
  Var raw_v = tape.leaf(as_matrix(params.sigma_raw));
  const Tensor noise = draw_noise(xm.rows(), xm.cols(), mc.samples, mc.antithetic, rng);
  ExplicitObjectiveInput in;
  in.net = &net;
  in.net_params = net_params;
  in.x = &xm;
  in.labels = labels;
  in.mu = mu_v;
  in.sigma = softplus(raw_v);
  in.noise = &noise;
  in.samples = mc.samples;
  in.lambda = mc.lambda;
  in.tm = &tm;
  in.loss = loss;
  auto terms = explicit_objective(tape, in);
  auto grads = tape.backward(sum(terms.j));
  InnerEstimate out;
  out.j = terms.j.value();
  out.loss = terms.loss.value();
  out.entropy = terms.entropy.value();
  out.grad_mu = grads.of(mu_v).reshaped(params.mu.shape());
  out.grad_sigma_raw = grads.of(raw_v).reshaped(params.sigma_raw.shape());
  return out;
}

Tensor conditioning_input(const Network& classifier, const Tensor& x, std::span<const int> labels,
                          const ThreatModel& tm) {
  tm.validate();
  const Tensor xm = as_matrix(x);
  auto input_grad = [&](const Tensor& at) {
    Tape tape;
    Var xv = tape.leaf(at);
    auto fp = forward(classifier, xv, ParamMode::constants);
    return tape.backward(sum(softmax_cross_entropy_rows(fp.output, labels))).of(xv);
  };
  Tensor g1 = input_grad(xm);
  Tensor delta(xm.shape());
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = tm.epsilon * ((g1[i] > 0) - (g1[i] < 0));
  tm.project(xm, delta);
  Tensor x_fgsm = xm;
  for (std::size_t i = 0; i < x_fgsm.size(); ++i) x_fgsm[i] += delta[i];
  Tensor g2 = input_grad(x_fgsm);
  const auto rows = xm.rows(), d = xm.cols();
  Tensor out({rows, 3 * d});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      out[i * 3 * d + j] = xm[i * d + j];
      out[i * 3 * d + d + j] = g1[i * d + j];
      out[i * 3 * d + 2 * d + j] = g2[i * d + j];
    }
  return out;
}

ExplicitGenerator ExplicitGenerator::create(std::size_t dim, std::span<const std::size_t> hidden, Rng& rng) {
  std::vector<std::size_t> dims{3 * dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(2 * dim);
  return ExplicitGenerator{Network::mlp(dims, Activation::relu, Activation::identity, rng), {}, false};
}

GeneratorHeads explicit_heads(const ExplicitGenerator& gen, std::span<const Var> params, Var conditioning) {
  const auto d = gen.dim();
  Var out = apply(gen.net, params, conditioning);
  GeneratorHeads h;
  h.mu = clamp(slice_cols(out, 0, d), -gen.clip.mu_max, gen.clip.mu_max);
  h.sigma = clamp(softplus(slice_cols(out, d, 2 * d)), gen.clip.sigma_min, gen.clip.sigma_max);
  return h;
}

namespace {

Tensor concat_condition(const Tensor& x, const Tensor& g1, const Tensor& g2) {
  const Tensor a = as_matrix(x), b = as_matrix(g1), c = as_matrix(g2);
  if (a.shape() != b.shape() || a.shape() != c.shape()) throw InvalidArgument("generator: x, g1, g2 shapes differ");
  const auto rows = a.rows(), d = a.cols();
  Tensor out({rows, 3 * d});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      out[i * 3 * d + j] = a[i * d + j];
      out[i * 3 * d + d + j] = b[i * d + j];
      out[i * 3 * d + 2 * d + j] = c[i * d + j];
    }
  return out;
}

}  // namespace

TanhGaussianParams amortized_explicit_params(const ExplicitGenerator& gen, const Tensor& x, const Tensor& g1,
                                             const Tensor& g2, const ThreatModel& tm) {
  tm.validate();
  const Tensor cond = concat_condition(x, g1, g2);
  if (cond.cols() != gen.net.input_dim()) throw InvalidArgument("amortized_explicit_params: generator input mismatch");
  Tape tape;
  auto params = bind_parameters(gen.net, tape, ParamMode::constants);
  auto heads = explicit_heads(gen, params, tape.constant(cond));
  TanhGaussianParams out{heads.mu.value(), heads.sigma.value()};
  for (auto& v : out.sigma_raw.data()) v = softplus_inverse(v);
  return out;
}

ImplicitSampler ImplicitSampler::create(std::size_t dim, std::size_t z_dim, std::span<const std::size_t> hidden,
                                        Rng& rng) {
  if (z_dim == 0) throw InvalidArgument("implicit sampler: z_dim must be at least 1");
  std::vector<std::size_t> dims{z_dim + 3 * dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(dim);
  return ImplicitSampler{Network::mlp(dims, Activation::relu, Activation::identity, rng), z_dim, false};
}

Tensor draw_latent(std::size_t rows, std::size_t z_dim, Rng& rng) {
  std::uniform_real_distribution<Real> u(-1.0, 1.0);
  Tensor z({rows, z_dim});
  for (auto& v : z.data()) v = u(rng);
  return z;
}

Var implicit_delta(const ImplicitSampler& s, std::span<const Var> params, Var z, Var conditioning, Real epsilon) {
  const Var parts[] = {z, conditioning};
  Var raw = apply(s.generator, params, concat_cols(parts));
  return scale(adt::tanh(clamp(raw, -kTanhArgLimit, kTanhArgLimit)), epsilon);
}

ImplicitDraw sample_implicit(const ImplicitSampler& s, const Tensor& x, const Tensor& g1, const Tensor& g2,
                             const ThreatModel& tm, Rng& rng) {
  tm.validate();
  if (s.z_dim == 0) throw InvalidArgument("sample_implicit: z_dim must be at least 1");
  const Tensor cond = concat_condition(x, g1, g2);
  if (cond.cols() + s.z_dim != s.generator.input_dim()) throw InvalidArgument("sample_implicit: generator input mismatch");
  ImplicitDraw out;
  out.z = draw_latent(cond.rows(), s.z_dim, rng);
  Tape tape;
  auto params = bind_parameters(s.generator, tape, ParamMode::constants);
  out.delta = implicit_delta(s, params, tape.constant(out.z), tape.constant(cond), tm.epsilon).value();
  if (x.rank() == 1) out.delta = out.delta.reshaped(x.shape());
  return out;
}

VariationalPosterior VariationalPosterior::create(std::size_t dim, std::size_t z_dim,
                                                  std::span<const std::size_t> hidden, Rng& rng) {
  std::vector<std::size_t> dims{dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(2 * z_dim);
  return VariationalPosterior{Network::mlp(dims, Activation::relu, Activation::identity, rng)};
}

Var entropy_lower_bound_rows(const VariationalPosterior& q, std::span<const Var> params, Var z, Var delta) {
  const auto zd = q.z_dim();
  if (z.value().rank() != 2 || z.value().cols() != zd) throw InvalidArgument("entropy_lower_bound: z dim mismatch");
  Var out = apply(q.q_net, params, delta);
  Var mean = slice_cols(out, 0, zd);
  Var log_std = clamp(slice_cols(out, zd, 2 * zd), q.log_std_min, q.log_std_max);
  Var t = mul(sub(z, mean), adt::exp(neg(log_std)));
  Var per_entry = add_scalar(neg(add(scale(square(t), 0.5), log_std)), -kHalfLog2Pi);
  return row_sum(per_entry);
}

Real entropy_lower_bound(const VariationalPosterior& q, const Tensor& z, const Tensor& delta) {
  Tape tape;
  auto params = bind_parameters(q.q_net, tape, ParamMode::constants);
  return mean(entropy_lower_bound_rows(q, params, tape.constant(as_matrix(z)), tape.constant(as_matrix(delta))))
      .value()
      .item();
}

}  // namespace adt
