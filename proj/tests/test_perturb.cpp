#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "adt/error.hpp"
#include "adt/optim.hpp"
#include "adt/perturb.hpp"
#include "support/gradcheck.hpp"
#include "support/quadrature.hpp"

using namespace adt;
using adt::testing::GaussHermite;

namespace {

const Real kEps = 8.0 / 255.0;

TanhGaussianParams params_1d(Real mu, Real sigma) {
  return {Tensor({1, 1}, mu), Tensor({1, 1}, softplus_inverse(sigma))};
}

// Two logits (-a x, a x) + (-b, b): CE of label 0 grows with x.
Network logistic_1d(Real a, Real b) {
  DenseLayer l{Tensor::matrix(1, 2, {-a, a}), Tensor::vector({-b, b}), Activation::identity};
  return Network({l});
}

Real ce_label0(Real z) {
  // CE of logits (-z, z) for class 0
  return std::log1p(std::exp(2 * z));
}

}  // namespace

TEST_CASE("threat model validation and projection") {
  CHECK_THROWS_AS(ThreatModel{0.0}.validate(), InvalidArgument);
  CHECK_THROWS_AS(ThreatModel{-1.0}.validate(), InvalidArgument);
  ThreatModel bad{0.1, std::pair<Real, Real>{1.0, 0.0}};
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);

  ThreatModel tm{0.1, std::pair<Real, Real>{0.0, 1.0}};
  Tensor x = Tensor::vector({0.05, 0.5, 0.97});
  Tensor d = Tensor::vector({-0.3, 0.05, 0.2});
  tm.project(x, d);
  CHECK(d[0] == doctest::Approx(-0.05));
  CHECK(d[1] == doctest::Approx(0.05));
  CHECK(d[2] == doctest::Approx(0.03));
}

TEST_CASE("softplus helpers and clip bounds") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
  for (Real y : {1e-3, 0.5, 1.0, 4.0, 30.0}) CHECK(softplus(softplus_inverse(y)) == doctest::Approx(y).epsilon(1e-12));
  auto p = TanhGaussianParams::initial(2, 3);
  const Tensor sig = p.sigma();
  for (Real s : sig.data()) CHECK(s == doctest::Approx(1.0));
  for (Real m : p.mu.data()) CHECK(m == 0.0);
  p.mu[0] = 10;
  p.mu[1] = -10;
  p.sigma_raw[0] = -50;
  p.sigma_raw[1] = 50;
  p.clip();
  CHECK(p.mu[0] == 4.0);
  CHECK(p.mu[1] == -4.0);
  CHECK(p.sigma()[0] == doctest::Approx(1e-3));
  CHECK(p.sigma()[1] == doctest::Approx(4.0));
}

TEST_CASE("collapsed sigma gives near-zero perturbations") {
  Rng rng(1);
  auto p = TanhGaussianParams::initial(1, 4);
  p.sigma_raw = Tensor({1, 4}, softplus_inverse(1e-3));
  for (int i = 0; i < 1000; ++i) {
    auto s = sample_explicit(p, ThreatModel{kEps}, rng);
    CHECK(max_abs(s.delta.data()) < 1e-2 * kEps);
  }
}

TEST_CASE("explicit samples stay strictly inside the ball") {
  Rng rng(2);
  std::uniform_real_distribution<Real> mu_d(-4, 4), sig_d(1e-3, 4);
  ThreatModel tm{kEps};
  int violations = 0;
  for (int i = 0; i < 1000; ++i) {
    TanhGaussianParams p{Tensor({1, 100}), Tensor({1, 100})};
    for (std::size_t j = 0; j < 100; ++j) {
      p.mu[j] = mu_d(rng);
      p.sigma_raw[j] = softplus_inverse(sig_d(rng));
    }
    auto s = sample_explicit(p, tm, rng);
    for (Real v : s.delta.data()) violations += !(std::abs(v) < kEps);
  }
  CHECK(violations == 0);
}

TEST_CASE("sample mean matches the pushforward expectation") {
  Rng rng(3);
  TanhGaussianParams p{Tensor::matrix(1, 2, {2.0, -2.0}), Tensor({1, 2}, softplus_inverse(0.1))};
  const int n = 100000;
  Real sum[2] = {0, 0}, sq[2] = {0, 0};
  for (int i = 0; i < n; ++i) {
    auto s = sample_explicit(p, ThreatModel{kEps}, rng);
    for (int j = 0; j < 2; ++j) {
      sum[j] += s.delta[j];
      sq[j] += s.delta[j] * s.delta[j];
    }
  }
  GaussHermite gh(80);
  for (int j = 0; j < 2; ++j) {
    const Real mean = sum[j] / n;
    const Real se = std::sqrt((sq[j] / n - mean * mean) / n);
    const Real mu = p.mu[j];
    const Real expected = gh.expect([&](Real r) { return kEps * std::tanh(mu + 0.1 * r); });
    CHECK(std::abs(mean - expected) < 3 * se);
    // The curvature of tanh moves the mean off eps*tanh(mu) by about sigma^2/2 * eps*tanh''(mu).
    CHECK(std::abs(mean - kEps * std::tanh(mu)) < 1e-3 * kEps);
  }
}

TEST_CASE("negative log-density point values") {
  auto p = params_1d(0.0, 1.0);
  Tensor r({1, 1}, 0.0);
  CHECK(neg_log_density(p, ThreatModel{kEps}, r) == doctest::Approx(0.918938533 + std::log(kEps)).epsilon(1e-9));
  CHECK(neg_log_density(p, ThreatModel{kEps}, r) == doctest::Approx(-2.5429).epsilon(1e-4));
  CHECK(neg_log_density(p, ThreatModel{1.0}, r) == doctest::Approx(0.9189385332).epsilon(1e-9));
}

TEST_CASE("negative log-density agrees with the closed-form pdf") {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const Real mu = std::uniform_real_distribution<Real>(-2, 2)(rng);
    const Real sigma = std::uniform_real_distribution<Real>(0.1, 3)(rng);
    auto p = params_1d(mu, sigma);
    auto s = sample_explicit(p, ThreatModel{kEps}, rng);
    const Real pdf = testing::tanh_gaussian_pdf(s.delta[0], mu, sigma, kEps);
    CHECK(neg_log_density(p, ThreatModel{kEps}, s.noise) == doctest::Approx(-std::log(pdf)).epsilon(1e-8));
  }
}

TEST_CASE("pushforward density integrates to one") {
  for (Real mu : {-1.0, 0.0, 1.0}) {
    for (Real sigma : {0.3, 1.0, 3.0}) {
      auto p = params_1d(mu, sigma);
      // delta = eps * tanh(u); d delta = eps * (1 - tanh(u)^2) du.
      auto integrand = [&](Real u) {
        const Real jac = kEps * 4.0 / std::pow(std::exp(u) + std::exp(-u), 2);
        Tensor r({1, 1}, (u - mu) / sigma);
        return std::exp(-neg_log_density(p, ThreatModel{kEps}, r)) * jac;
      };
      const Real total = testing::adaptive_simpson(integrand, -40, 40, 1e-12);
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("negative log-density gradients") {
  Rng rng(5);
  Tensor noise = testing::random_tensor({6, 3}, rng, -2, 2);
  testing::ScalarBuilder f = [&](Tape&, const std::vector<Var>& v) {
    return sum(neg_log_density_rows(v[0], softplus(v[1]), noise, kEps));
  };
  CHECK(testing::gradcheck_error(f, {testing::random_tensor({2, 3}, rng), testing::random_tensor({2, 3}, rng)}) <
        1e-5);
  // Saturated arguments stay finite.
  Tape tape;
  Var mu = tape.leaf(Tensor({1, 1}, 4.0));
  Var sig = tape.leaf(Tensor({1, 1}, 4.0));
  Var v = neg_log_density_rows(mu, sig, Tensor({1, 1}, 8.0), kEps);
  CHECK(std::isfinite(v.value()[0]));
  CHECK(tape.backward(sum(v)).of(mu).all_finite());
}

TEST_CASE("objective with lambda zero is the mean classification loss") {
  Rng init(6);
  std::size_t dims[] = {3, 8, 4};
  Network net = Network::mlp(dims, Activation::tanh, Activation::identity, init);
  Tensor x = testing::random_tensor({2, 3}, init, 0, 1);
  std::vector<int> y{1, 3};
  auto p = TanhGaussianParams::initial(2, 3);
  ThreatModel tm{0.1};
  McOptions mc{7, 0.0, false};
  Rng a(9), b(9);
  auto est = inner_objective_exp(net, x, y, p, tm, Loss{}, mc, a);
  Tensor noise = draw_noise(2, 3, 7, false, b);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(est.j[i] == doctest::Approx(est.loss[i]).epsilon(1e-14));
    Real manual = 0;
    for (std::size_t s = 0; s < 7; ++s) {
      Tensor xi = x.row_copy(i);
      for (std::size_t c = 0; c < 3; ++c) xi[c] += 0.1 * std::tanh(noise.at(i * 7 + s, c));
      Tensor z = infer(net, xi);
      Real m = *std::max_element(z.data().begin(), z.data().end()), lse = 0;
      for (Real v : z.data()) lse += std::exp(v - m);
      manual += (m + std::log(lse) - z[y[i]]) / 7;
    }
    CHECK(est.loss[i] == doctest::Approx(manual).epsilon(1e-12));
  }
  McOptions with_entropy{7, 1.0, false};
  Rng c(9);
  auto est2 = inner_objective_exp(net, x, y, p, tm, Loss{}, with_entropy, c);
  for (std::size_t i = 0; i < 2; ++i) CHECK(est2.j[i] == doctest::Approx(est.loss[i] + est2.entropy[i]));
}

TEST_CASE("explicit objective gradients match finite differences") {
  Rng rng(10);
  std::size_t dims[] = {2, 5, 3};
  Network net = Network::mlp(dims, Activation::tanh, Activation::identity, rng);
  Tensor x = testing::random_tensor({2, 2}, rng, 0.2, 0.8);
  std::vector<int> y{0, 2};
  Tensor noise = testing::random_tensor({6, 2}, rng, -1.5, 1.5);
  Real w[] = {0.2, 0.5, 0.3};
  for (LossKind kind : {LossKind::cross_entropy, LossKind::cw_margin, LossKind::trades}) {
    ThreatModel tm{0.2};
    testing::ScalarBuilder f = [&](Tape& tape, const std::vector<Var>& v) {
      auto np = bind_parameters(net, tape, ParamMode::constants);
      ExplicitObjectiveInput in;
      in.net = &net;
      in.net_params = np;
      in.x = &x;
      in.labels = y;
      in.mu = v[0];
      in.sigma = softplus(v[1]);
      in.noise = &noise;
      in.samples = 3;
      in.weights = w;
      in.lambda = 0.05;
      in.tm = &tm;
      in.loss = Loss{kind, 2.0};
      return testing::weighted_total(tape, explicit_objective(tape, in).j, 11);
    };
    CHECK(testing::gradcheck_error(f, {testing::random_tensor({2, 2}, rng), testing::random_tensor({2, 2}, rng)}) <
          1e-5);
  }
}

TEST_CASE("linear-logit pathwise gradient matches quadrature") {
  // Loss is the logit w^T (x + delta); E[L] has gradient eps * w * E[sech^2(mu + sigma r)].
  DenseLayer l{Tensor::matrix(2, 1, {1.5, -0.7}), Tensor::vector({0.0}), Activation::identity};
  Network net({l});
  Tensor x = Tensor::matrix(1, 2, {0.3, 0.6});
  std::vector<int> y{0};
  TanhGaussianParams p{Tensor::matrix(1, 2, {0.4, -1.1}), Tensor::matrix(1, 2, {softplus_inverse(0.8), softplus_inverse(1.7)})};
  Rng rng(11);
  auto est = inner_objective_exp(net, x, y, p, ThreatModel{kEps}, Loss{LossKind::logit}, McOptions{100000, 0.0}, rng);
  GaussHermite gh(80);
  const Real w[] = {1.5, -0.7}, sig[] = {0.8, 1.7};
  for (int j = 0; j < 2; ++j) {
    const Real mu = p.mu[j];
    const Real expected = kEps * w[j] * gh.expect([&](Real r) {
      const Real t = std::tanh(mu + sig[j] * r);
      return 1 - t * t;
    });
    CHECK(std::abs(est.grad_mu[j] - expected) < 0.01 * std::abs(expected));
  }
}

TEST_CASE("sampled expected loss never beats the best single point") {
  Network net = logistic_1d(3.0, 0.2);
  Tensor x({1, 1}, 0.4);
  const Real eps = 0.3;
  Real grid_max = -1e300;
  for (int i = 0; i < 10000; ++i) {
    const Real d = -eps + 2 * eps * (i + 0.5) / 10000;
    grid_max = std::max(grid_max, ce_label0(3.0 * (0.4 + d) + 0.2));
  }
  Rng rng(12);
  std::uniform_real_distribution<Real> mu_d(-4, 4), sig_d(1e-3, 4);
  for (int t = 0; t < 100; ++t) {
    auto p = params_1d(mu_d(rng), sig_d(rng));
    const int k = 2000;
    Real s = 0, s2 = 0;
    for (int i = 0; i < k; ++i) {
      auto smp = sample_explicit(p, ThreatModel{eps}, rng);
      const Real v = ce_label0(3.0 * (0.4 + smp.delta[0]) + 0.2);
      s += v;
      s2 += v * v;
    }
    const Real mean = s / k, se = std::sqrt(std::max(0.0, s2 / k - mean * mean) / k);
    CHECK(mean <= grid_max + 3 * se);
  }
}

TEST_CASE("antithetic noise pairs are negated") {
  Rng rng(13);
  Tensor r = draw_noise(3, 2, 4, true, rng);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t s = 0; s < 4; s += 2)
      for (std::size_t c = 0; c < 2; ++c) CHECK(r.at(i * 4 + s, c) == -r.at(i * 4 + s + 1, c));
  CHECK_THROWS_AS(draw_noise(1, 1, 3, true, rng), InvalidArgument);
}

TEST_CASE("inner ascent degenerates to a point mass without entropy") {
  // Steep linear loss: delta -> +eps is optimal, so sigma should collapse.
  DenseLayer l{Tensor::matrix(1, 1, {1000.0}), Tensor::vector({0.0}), Activation::identity};
  Network net({l});
  Tensor x({1, 1}, 0.5);
  std::vector<int> y{0};
  auto run = [&](Real lambda) {
    auto p = TanhGaussianParams::initial(1, 1);
    OptState st(OptimizerConfig::adam(0.3, 0.0, 0.0));
    Rng rng(14);
    for (int step = 0; step < 200; ++step) {
      auto est = inner_objective_exp(net, x, y, p, ThreatModel{kEps}, Loss{LossKind::logit}, McOptions{10, lambda, true},
                                     rng);
      Tensor* ps[] = {&p.mu, &p.sigma_raw};
      Tensor gs[] = {est.grad_mu, est.grad_sigma_raw};
      ascend(ps, gs, st);
      p.clip();
    }
    return p.sigma()[0];
  };
  const Real floor = ClipBounds{}.sigma_min;
  const Real s0 = run(0.0);
  const Real s1 = run(0.01);
  CHECK(s0 == doctest::Approx(floor).epsilon(1e-9));
  CHECK(s1 >= 10 * floor);
}

TEST_CASE("zero generator emits constant heads") {
  std::size_t dims[] = {12, 6, 8};
  ExplicitGenerator gen{Network::zeros(dims, Activation::relu, Activation::identity), {}, false};
  CHECK(gen.dim() == 4);
  Rng rng(15);
  Tensor x = testing::random_tensor({3, 4}, rng), g1 = testing::random_tensor({3, 4}, rng),
         g2 = testing::random_tensor({3, 4}, rng);
  auto p = amortized_explicit_params(gen, x, g1, g2, ThreatModel{kEps});
  CHECK(p.mu.shape() == Shape{3, 4});
  for (Real m : p.mu.data()) CHECK(m == 0.0);
  const Tensor sig = p.sigma();
  for (Real s : sig.data()) CHECK(s == doctest::Approx(0.6931).epsilon(1e-4));
  Rng r2(16);
  auto made = ExplicitGenerator::create(5, std::span<const std::size_t>{}, r2);
  CHECK(made.net.input_dim() == 15);
  CHECK(made.net.output_dim() == 10);
}

TEST_CASE("generator heads respond to the input and respect clip bounds") {
  Rng rng(17);
  std::size_t hidden[] = {16};
  auto gen = ExplicitGenerator::create(3, hidden, rng);
  for (auto* t : gen.net.parameters())
    for (auto& v : t->data()) v *= 8;  // push heads into the clipped range
  Tensor x = testing::random_tensor({5, 3}, rng), g1 = testing::random_tensor({5, 3}, rng),
         g2 = testing::random_tensor({5, 3}, rng);
  ThreatModel tm{kEps};
  auto p = amortized_explicit_params(gen, x, g1, g2, tm);
  auto s = p.sigma();
  for (std::size_t i = 0; i < p.mu.size(); ++i) {
    CHECK(std::abs(p.mu[i]) <= 4.0);
    CHECK(s[i] >= 1e-3 * (1 - 1e-12));
    CHECK(s[i] <= 4.0 * (1 + 1e-12));
  }
  Rng r3(18);
  auto soft = ExplicitGenerator::create(3, hidden, r3);
  auto base = amortized_explicit_params(soft, x, g1, g2, tm);
  Tensor x2 = x;
  x2[0] += 1e-3;
  auto moved = amortized_explicit_params(soft, x2, g1, g2, tm);
  Real change = 0;
  for (std::size_t j = 0; j < 3; ++j)
    change += std::abs(moved.mu[j] - base.mu[j]) + std::abs(moved.sigma_raw[j] - base.sigma_raw[j]);
  CHECK(change > 0);
  for (std::size_t j = 3; j < base.mu.size(); ++j) CHECK(moved.mu[j] == base.mu[j]);
  CHECK_THROWS_AS(amortized_explicit_params(soft, x, g1, testing::random_tensor({5, 2}, rng), tm), InvalidArgument);
}

TEST_CASE("conditioning input holds gradients at x and at the FGSM point") {
  Rng rng(19);
  std::size_t dims[] = {2, 2};
  Network net = Network::mlp(dims, Activation::relu, Activation::identity, rng);
  Tensor x = Tensor::matrix(1, 2, {0.2, 0.7});
  std::vector<int> y{1};
  ThreatModel tm{0.1};
  Tensor c = conditioning_input(net, x, y, tm);
  CHECK(c.shape() == Shape{1, 6});
  // For a linear model the CE input gradient is W (softmax - onehot).
  auto grad_at = [&](Tensor pt) {
    Tensor z = infer(net, pt);
    Real m = std::max(z[0], z[1]);
    Real e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
    Real p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
    const auto& W = net.layers()[0].weight;
    return std::vector<Real>{W.at(0, 0) * p0 + W.at(0, 1) * (p1 - 1), W.at(1, 0) * p0 + W.at(1, 1) * (p1 - 1)};
  };
  auto g1 = grad_at(x);
  CHECK(c[2] == doctest::Approx(g1[0]));
  CHECK(c[3] == doctest::Approx(g1[1]));
  Tensor xf = x;
  for (int j = 0; j < 2; ++j) xf[j] += 0.1 * ((g1[j] > 0) - (g1[j] < 0));
  auto g2 = grad_at(xf);
  CHECK(c[4] == doctest::Approx(g2[0]));
  CHECK(c[5] == doctest::Approx(g2[1]));
}

TEST_CASE("implicit sampler support, z sensitivity and collisions") {
  Rng rng(20);
  std::size_t hidden[] = {16};
  auto s = ImplicitSampler::create(3, 4, hidden, rng);
  CHECK(s.generator.input_dim() == 13);
  Tensor x = testing::random_tensor({1, 3}, rng), g1 = testing::random_tensor({1, 3}, rng),
         g2 = testing::random_tensor({1, 3}, rng);
  ThreatModel tm{kEps};

  auto loud = s;
  for (auto* t : loud.generator.parameters())
    for (auto& v : t->data()) v *= 50;
  for (int i = 0; i < 10000; ++i) {
    auto d = sample_implicit(loud, x, g1, g2, tm, rng);
    CHECK(max_abs(d.delta.data()) < kEps);
  }

  auto constant = s;
  auto& w0 = constant.generator.layers()[0].weight;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < w0.cols(); ++c) w0.at(r, c) = 0;
  auto first = sample_implicit(constant, x, g1, g2, tm, rng);
  for (int i = 0; i < 100; ++i) CHECK(sample_implicit(constant, x, g1, g2, tm, rng).delta == first.delta);

  int collisions = 0;
  for (int i = 0; i < 1000; ++i) {
    auto a = sample_implicit(s, x, g1, g2, tm, rng);
    auto b = sample_implicit(s, x, g1, g2, tm, rng);
    CHECK(a.z != b.z);
    collisions += a.delta == b.delta;
  }
  CHECK(collisions == 0);
  const Tensor lat = draw_latent(100, 4, rng);
  for (Real v : lat.data()) CHECK((v >= -1 && v < 1));
}

TEST_CASE("entropy bound point value and constant invariance") {
  std::size_t dims[] = {1, 2};
  VariationalPosterior q{Network::zeros(dims, Activation::relu, Activation::identity)};
  CHECK(q.z_dim() == 1);
  CHECK(entropy_lower_bound(q, Tensor({1, 1}, 0.0), Tensor({1, 1}, 0.01)) == doctest::Approx(-0.9189385332));
  CHECK(entropy_lower_bound(q, Tensor({1, 1}, 1.0), Tensor({1, 1}, 0.01)) == doctest::Approx(-1.4189385332));

  Rng rng(21);
  std::size_t hd[] = {3};
  auto qr = VariationalPosterior::create(2, 2, hd, rng);
  Tensor z = draw_latent(4, 2, rng), d = testing::random_tensor({4, 2}, rng, -0.03, 0.03);
  auto grads_with = [&](Real c) {
    Tape tape;
    auto ps = bind_parameters(qr.q_net, tape, ParamMode::leaves);
    Var b = add_scalar(mean(entropy_lower_bound_rows(qr, ps, tape.constant(z), tape.constant(d))), c);
    auto g = tape.backward(b);
    std::vector<Tensor> out;
    for (auto& p : ps) out.push_back(g.of(p));
    return out;
  };
  CHECK(grads_with(0.0) == grads_with(3.7));

  testing::ScalarBuilder f = [&](Tape& tape, const std::vector<Var>& v) {
    auto ps = bind_parameters(qr.q_net, tape, ParamMode::constants);
    return sum(entropy_lower_bound_rows(qr, ps, v[0], v[1]));
  };
  CHECK(testing::gradcheck_error(f, {z, d}) < 1e-5);
}

namespace {

// Trains a linear q (mean and log-std affine in delta) by Adam ascent on the
// mean bound over a fixed batch.
Real train_linear_q(VariationalPosterior& q, const Tensor& z, const Tensor& d, int steps, Real lr) {
  OptState st(OptimizerConfig::adam(lr, 0.9, 0.999));
  Real last = 0;
  for (int i = 0; i < steps; ++i) {
    st.config.lr = lr * (1.0 - static_cast<Real>(i) / steps) + 1e-4;
    Tape tape;
    auto ps = bind_parameters(q.q_net, tape, ParamMode::leaves);
    Var b = mean(entropy_lower_bound_rows(q, ps, tape.constant(z), tape.constant(d)));
    last = b.value().item();
    auto g = tape.backward(b);
    std::vector<Tensor> gs;
    for (auto& p : ps) gs.push_back(g.of(p));
    auto params = q.q_net.parameters();
    ascend(params, gs, st);
  }
  return last;
}

}  // namespace

TEST_CASE("learned bound reaches the grid optimum for a linear generator") {
  // delta = eps * z. Bound over (slope a, log-std s): mean -((z - a delta)/e^s)^2/2 - s - log(2 pi)/2.
  Rng rng(22);
  Tensor z = draw_latent(256, 1, rng);
  Tensor d = z;
  for (auto& v : d.data()) v *= kEps;
  Real grid_best = -1e300;
  for (int i = 0; i <= 100; ++i) {
    const Real a = (i / 100.0) * 2 / kEps;
    for (int j = 0; j <= 140; ++j) {
      const Real s = -5 + 7 * j / 140.0;
      Real tot = 0;
      for (std::size_t n = 0; n < 256; ++n) {
        const Real t = (z[n] - a * d[n]) / std::exp(s);
        tot += -0.5 * t * t - s - 0.5 * std::log(2 * std::numbers::pi);
      }
      grid_best = std::max(grid_best, tot / 256);
    }
  }
  std::size_t dims[] = {1, 2};
  auto q = VariationalPosterior::create(1, 1, std::span<const std::size_t>{}, rng);
  CHECK(q.q_net.input_dim() == 1);
  CHECK(dims[1] == q.q_net.output_dim());
  train_linear_q(q, z, d, 6000, 0.05);
  const Real learned = entropy_lower_bound(q, z, d);
  CHECK(std::abs(learned - grid_best) < 1e-2);
}

TEST_CASE("learned bound does not exceed the true conditional log-density") {
  // A generator that ignores z leaves z ~ U(-1,1)^2 given delta, so E log q <= -2 log 2.
  Rng rng(23);
  std::size_t hidden[] = {8};
  auto s = ImplicitSampler::create(1, 2, hidden, rng);
  auto& w0 = s.generator.layers()[0].weight;
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < w0.cols(); ++c) w0.at(r, c) = 0;
  Tensor x = Tensor::matrix(1, 1, {0.3}), g = Tensor::matrix(1, 1, {0.1});
  auto draw_batch = [&](std::size_t n) {
    Tensor zs({n, 2}), ds({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
      auto dr = sample_implicit(s, x, g, g, ThreatModel{kEps}, rng);
      zs.at(i, 0) = dr.z[0];
      zs.at(i, 1) = dr.z[1];
      ds[i] = dr.delta[0];
    }
    return std::pair{zs, ds};
  };
  auto [zt, dt] = draw_batch(512);
  auto q = VariationalPosterior::create(1, 2, std::span<const std::size_t>{}, rng);
  train_linear_q(q, zt, dt, 2000, 0.05);
  auto [zv, dv] = draw_batch(20000);
  Tape tape;
  auto ps = bind_parameters(q.q_net, tape, ParamMode::constants);
  Tensor rows = entropy_lower_bound_rows(q, ps, tape.constant(zv), tape.constant(dv)).value();
  Real m = 0, m2 = 0;
  for (Real v : rows.data()) {
    m += v;
    m2 += v * v;
  }
  m /= rows.size();
  const Real se = std::sqrt((m2 / rows.size() - m * m) / rows.size());
  CHECK(m <= -2 * std::log(2.0) + 3 * se);
  CHECK(m > -2 * std::log(2.0) - 0.5);  // training got somewhere near the optimum
}
