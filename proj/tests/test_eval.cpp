#include <doctest.h>

#include <cmath>
#include <sstream>

#include "adt/error.hpp"
#include "adt/eval.hpp"
#include "adt/trainers.hpp"
#include "support/gradcheck.hpp"
#include "support/linalg.hpp"
#include "support/mask_oracle.hpp"

using namespace adt;
using adt::testing::MaskOracle;
using adt::testing::random_oracle;

namespace {

Network linear(std::size_t in, std::size_t out, std::vector<Real> w, std::vector<Real> b = {}) {
  if (b.empty()) b.assign(out, 0.0);
  return Network({DenseLayer{Tensor::matrix(in, out, std::move(w)), Tensor::vector(std::move(b)), Activation::identity}});
}

Network trained_moons(TrainMethod m, std::uint64_t seed, Dataset& test) {
  auto all = make_synthetic(SyntheticKind::two_moons, 600, 0.1, seed);
  auto [tr, te] = split(all, 0.8, seed);
  test = te;
  TrainSpec s;
  s.method = m;
  s.epochs = 60;
  s.batch_size = 32;
  s.threat = ThreatModel{0.1, std::pair<Real, Real>{0.0, 1.0}};
  s.seed = seed;
  return train(s, tr).net;
}

}  // namespace

TEST_CASE("identity suite reports natural accuracy") {
  Rng rng(1);
  auto o = random_oracle(1, 50, rng);
  SuiteAttack id = identity_attack();
  auto r = robust_accuracy(o.predictor(), o.inputs(), o.y, std::span(&id, 1));
  CHECK(r.robust_accuracy == r.natural_accuracy);
  CHECK(r.accuracy_of("natural") == 1.0);
  CHECK_THROWS_AS(r.accuracy_of("pgd-20"), InvalidArgument);
}

TEST_CASE("robust accuracy equals the preset-mask oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t attacks = 1 + rng() % 5, n = 1 + rng() % 40;
    auto o = random_oracle(attacks, n, rng);
    std::vector<SuiteAttack> suite;
    for (std::size_t a = 0; a < attacks; ++a) suite.push_back(o.attack(a));
    auto r = robust_accuracy(o.predictor(), o.inputs(), o.y, suite);
    std::size_t robust = 0;
    for (std::size_t i = 0; i < n; ++i) {
      bool all = true;
      for (std::size_t a = 0; a < attacks; ++a) all = all && o.masks[a][i];
      CHECK(r.worst_case_correct[i] == all);
      robust += all;
    }
    CHECK(r.robust_accuracy == static_cast<Real>(robust) / static_cast<Real>(n));
    for (Real acc : r.accuracy) CHECK(r.robust_accuracy <= acc);
    // Superset suites never raise A_rob.
    suite.push_back(identity_attack());
    auto r2 = robust_accuracy(o.predictor(), o.inputs(), o.y, suite);
    CHECK(r2.robust_accuracy <= r.robust_accuracy);
    CHECK(r2.robust_accuracy <= r2.natural_accuracy);
  }
}

TEST_CASE("correct under one attack and wrong under another counts as not robust") {
  MaskOracle o;
  o.masks = {{true}, {false}};
  o.y = {1};
  std::vector<SuiteAttack> suite{o.attack(0), o.attack(1)};
  auto r = robust_accuracy(o.predictor(), o.inputs(), o.y, suite);
  CHECK(r.accuracy == std::vector<Real>{1.0, 0.0});
  CHECK(r.robust_accuracy == 0.0);
  CHECK_THROWS_AS(robust_accuracy(o.predictor(), o.inputs(), o.y, std::span<const SuiteAttack>{}), InvalidArgument);
}

TEST_CASE("report csv is deterministic and reads back") {
  Dataset te;
  auto net = trained_moons(TrainMethod::standard, 0, te);
  ThreatModel tm{0.1, std::pair<Real, Real>{0.0, 1.0}};
  auto csv = [&] {
    std::vector<SuiteAttack> suite{identity_attack(), make_suite_attack(net, AttackSpec::fgsm(), tm, 3),
                                   make_suite_attack(net, AttackSpec::pgd(20), tm, 3)};
    std::vector<EvalReport> reps{robust_accuracy(net, te, suite, "standard")};
    std::ostringstream os;
    write_csv(os, reps);
    std::ostringstream js;
    write_json(js, reps);
    CHECK(js.str().find("runtime_ms") != std::string::npos);
    // FGSM never beats natural accuracy on this model.
    CHECK(reps[0].accuracy_of("fgsm") <= reps[0].natural_accuracy);
    return os.str();
  };
  const auto a = csv(), b = csv();
  CHECK(a == b);
  std::istringstream is(a);
  auto rows = read_csv_report(is);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].attack == "natural");
  CHECK(rows[2].attack == "pgd-20");
  CHECK(rows[0].accuracy == doctest::Approx(rows[0].natural_accuracy));
  std::istringstream bad("x,y\n");
  CHECK_THROWS_AS(read_csv_report(bad), IoError);
}

TEST_CASE("diversity") {
  std::vector<Tensor> two{Tensor::vector({0, 0}), Tensor::vector({2, 0})};
  CHECK(diversity_l2(two) == 2.0);
  std::vector<Tensor> same(5, Tensor::vector({0.3, 0.1, 0.2}));
  CHECK(diversity_l2(same) == 0.0);
  std::vector<Tensor> tri{Tensor::vector({0, 0}), Tensor::vector({3, 0}), Tensor::vector({0, 4})};
  CHECK(diversity_l2(tri) == doctest::Approx(4.0));
  CHECK_THROWS_AS(diversity_l2(std::span(two).first(1)), InvalidArgument);
}

TEST_CASE("loss surface grid") {
  auto net = linear(3, 2, {1, -1, 0.5, 2, -0.3, 0.2}, {0.1, -0.1});
  Tensor x = Tensor::vector({0.4, 0.5, 0.6});
  ThreatModel tm{0.1, std::pair<Real, Real>{0.0, 1.0}};
  auto s = loss_surface_grid(net, x, 0, tm, 7, 1, Loss{LossKind::cw_margin});
  REQUIRE(s.loss.shape() == Shape{7, 7});
  CHECK_FALSE(s.gradient_fallback);
  Real dgr = 0, ng = 0, nr = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    dgr += s.d_g[k] * s.d_r[k];
    ng += s.d_g[k] * s.d_g[k];
    nr += s.d_r[k] * s.d_r[k];
  }
  CHECK(std::abs(dgr) < 1e-12);
  CHECK(ng == doctest::Approx(1.0));
  CHECK(nr == doctest::Approx(1.0));
  CHECK(s.offsets.front() == -0.1);
  CHECK(s.offsets.back() == doctest::Approx(0.1));
  // Center is the unperturbed margin.
  const Tensor z = infer(net, x);
  CHECK(s.loss.at(3, 3) == z[1] - z[0]);
  // Margin of a linear model is affine in (a, b): fit a plane on the symmetric grid.
  Real mean = 0, sa = 0, sb = 0, aa = 0;
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) {
      mean += s.loss.at(i, j) / 49;
      sa += s.offsets[i] * s.loss.at(i, j);
      sb += s.offsets[j] * s.loss.at(i, j);
      aa += s.offsets[i] * s.offsets[i];
    }
  Real worst = 0;
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j)
      worst = std::max(worst, std::abs(s.loss.at(i, j) - mean - sa / aa * s.offsets[i] - sb / aa * s.offsets[j]));
  CHECK(worst < 1e-10);
  // Along the gradient axis the loss increases.
  CHECK(s.loss.at(6, 3) > s.loss.at(0, 3));

  auto flat = linear(3, 2, {0, 0, 0, 0, 0, 0});
  auto f = loss_surface_grid(flat, x, 1, tm, 5, 2);
  CHECK(f.gradient_fallback);
  Real d = 0;
  for (std::size_t k = 0; k < 3; ++k) d += f.d_g[k] * f.d_r[k];
  CHECK(std::abs(d) < 1e-12);
  CHECK_THROWS_AS(loss_surface_grid(net, x, 0, tm, 2), InvalidArgument);
}

TEST_CASE("power iteration on known spectra") {
  auto diag = [](const Tensor& v) { return Tensor::vector({3 * v[0], v[1]}); };
  auto e = dominant_eigenvalue(diag, 2, 200, 1e-12, 4);
  CHECK(e.converged);
  CHECK(e.value == doctest::Approx(3.0).epsilon(1e-6));
  auto ident = [](const Tensor& v) { return v; };
  auto one = dominant_eigenvalue(ident, 6, 50, 1e-12, 1);
  CHECK(one.converged);
  CHECK(one.iterations == 1);
  CHECK(one.value == doctest::Approx(1.0));
  auto neg = [](const Tensor& v) { return Tensor::vector({-5 * v[0], 2 * v[1]}); };
  CHECK(dominant_eigenvalue(neg, 2, 500, 1e-12, 3).value == doctest::Approx(5.0));
  // Two iterations cannot converge on a slow spectrum: flagged, last estimate kept.
  auto slow = [](const Tensor& v) { return Tensor::vector({1.0 * v[0], 0.999 * v[1]}); };
  auto s = dominant_eigenvalue(slow, 2, 2, 1e-14, 3);
  CHECK_FALSE(s.converged);
  CHECK(s.iterations == 2);
  CHECK_THROWS_AS(dominant_eigenvalue(ident, 2, 0, 1e-6), InvalidArgument);
}

TEST_CASE("input hessian eigenvalue matches a dense second-difference oracle") {
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    std::size_t dims[] = {6, 10, 3};
    auto net = Network::mlp(dims, Activation::tanh, Activation::identity, rng);
    Tensor x = testing::random_tensor({6}, rng, 0, 1);
    const int y = static_cast<int>(seed % 3);
    auto est = dominant_hessian_eigenvalue(net, x, y, 500, 1e-10, seed);
    auto loss = [&](const std::vector<double>& p) {
      Tape t;
      auto np = bind_parameters(net, t, ParamMode::constants);
      const Tensor z = apply(net, np, t.constant(Tensor::matrix(1, 6, p))).value();
      double m = z[0], s = 0;
      for (std::size_t c = 1; c < 3; ++c) m = std::max(m, z[c]);
      for (std::size_t c = 0; c < 3; ++c) s += std::exp(z[c] - m);
      return m + std::log(s) - z[y];
    };
    std::vector<double> x0(x.data().begin(), x.data().end());
    const double ref = testing::dominant_magnitude(testing::jacobi_eigenvalues(testing::fd_hessian(loss, x0), 6));
    CAPTURE(seed);
    CHECK(est.converged);
    CHECK(std::abs(est.value - ref) / ref < 1e-3);
  }
}

TEST_CASE("pca projection") {
  std::vector<Tensor> line;
  for (Real t : {-2.0, -0.5, 0.0, 1.0, 1.5}) line.push_back(Tensor::vector({1 + t, 2 + 2 * t, 3 - t}));
  auto p = pca_project(line);
  CHECK(p.explained[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(p.explained[0] > 0);
  // First coordinate is the signed position along the line (up to sign), centred.
  const Real scale = std::sqrt(6.0), sign = p.coords.at(0, 0) < 0 ? 1.0 : -1.0;
  const Real ts[] = {-2.0, -0.5, 0.0, 1.0, 1.5};
  for (std::size_t i = 0; i < 5; ++i) CHECK(sign * p.coords.at(i, 0) == doctest::Approx((ts[i] - 0.0) * scale).epsilon(1e-9));

  Rng rng(5);
  std::vector<Tensor> flat;
  for (int i = 0; i < 30; ++i) flat.push_back(testing::random_tensor({2}, rng));
  auto q = pca_project(flat);
  CHECK(q.explained[0] >= q.explained[1]);
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t j = i + 1; j < 30; ++j) {
      const Real orig = std::hypot(flat[i][0] - flat[j][0], flat[i][1] - flat[j][1]);
      const Real proj = std::hypot(q.coords.at(i, 0) - q.coords.at(j, 0), q.coords.at(i, 1) - q.coords.at(j, 1));
      CHECK(proj == doctest::Approx(orig).epsilon(1e-10));
    }

  std::vector<Tensor> cloud;
  for (int i = 0; i < 40; ++i) cloud.push_back(testing::random_tensor({5}, rng));
  auto c = pca_project(cloud);
  CHECK(c.explained[0] >= c.explained[1]);
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = i + 1; j < 40; ++j) {
      Real orig = 0;
      for (std::size_t k = 0; k < 5; ++k) orig += (cloud[i][k] - cloud[j][k]) * (cloud[i][k] - cloud[j][k]);
      const Real proj = std::hypot(c.coords.at(i, 0) - c.coords.at(j, 0), c.coords.at(i, 1) - c.coords.at(j, 1));
      CHECK(proj <= std::sqrt(orig) + 1e-12);
    }
  // Explained variance matches the covariance eigenvalues.
  std::vector<double> cov(25, 0.0), mean(5, 0.0);
  for (auto& s : cloud)
    for (std::size_t k = 0; k < 5; ++k) mean[k] += s[k] / 40;
  for (auto& s : cloud)
    for (std::size_t a = 0; a < 5; ++a)
      for (std::size_t b = 0; b < 5; ++b) cov[a * 5 + b] += (s[a] - mean[a]) * (s[b] - mean[b]) / 39;
  auto ev = testing::jacobi_eigenvalues(cov, 5);
  std::sort(ev.rbegin(), ev.rend());
  CHECK(c.explained[0] == doctest::Approx(ev[0]).epsilon(1e-8));
  CHECK(c.explained[1] == doctest::Approx(ev[1]).epsilon(1e-8));

  std::vector<Tensor> same(4, Tensor::vector({1, 1}));
  CHECK_THROWS_AS(pca_project(same), InvalidArgument);
  std::ostringstream os;
  write_pca_csv(os, c);
  CHECK(os.str().rfind("index,pc1,pc2\n", 0) == 0);
}

TEST_CASE("transfer evaluation") {
  Dataset te;
  auto a = trained_moons(TrainMethod::standard, 1, te);
  Dataset te2;
  auto b = trained_moons(TrainMethod::standard, 2, te2);
  ThreatModel tm{0.1, std::pair<Real, Real>{0.0, 1.0}};
  const auto spec = AttackSpec::pgd(20);
  auto white = make_suite_attack(a, spec, tm, 7);
  std::vector<SuiteAttack> suite{white};
  const Real wb = robust_accuracy(a, te, suite).robust_accuracy;
  CHECK(transfer_eval(a, a, te, spec, tm, 7) == wb);
  // Constant target: accuracy is its class's base rate.
  auto constant = linear(2, 2, {0, 0, 0, 0}, {0, 1});
  Real base = 0;
  for (int y : te.labels) base += y == 1;
  CHECK(transfer_eval(a, constant, te, spec, tm, 7) == base / static_cast<Real>(te.size()));
  // Transferred examples hurt the target less than its own white-box ones.
  std::vector<SuiteAttack> bs{make_suite_attack(b, spec, tm, 7)};
  CHECK(transfer_eval(a, b, te, spec, tm, 7) >= robust_accuracy(b, te, bs).robust_accuracy);
  auto wide = linear(3, 2, {0, 0, 0, 0, 0, 0});
  CHECK_THROWS_AS(transfer_eval(a, wide, te, spec, tm, 7), InvalidArgument);
}
