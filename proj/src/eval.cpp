#include "adt/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "adt/error.hpp"
#include "adt/hvp.hpp"
#include "adt/rng.hpp"

namespace adt {

namespace {

Tensor plus(const Tensor& x, const Tensor& d) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i];
  return out;
}

Real dot(std::span<const Real> a, std::span<const Real> b) {
  Real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalize(std::vector<Real>& v) {
  const Real n = l2_norm(v);
  for (auto& e : v) e /= n;
}

// Removes the components of v along each (unit) vector in `basis`.
void orthogonalize(std::vector<Real>& v, const std::vector<std::vector<Real>>& basis) {
  for (const auto& b : basis) {
    const Real p = dot(v, b);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * b[i];
  }
}

std::vector<Real> gaussian_vector(std::size_t d, Rng& rng) {
  std::normal_distribution<Real> n(0.0, 1.0);
  std::vector<Real> v(d);
  for (auto& e : v) e = n(rng);
  return v;
}

Tensor as_row(const Tensor& x) {
  if (x.rank() == 1) return x.reshaped({1, x.size()});
  if (x.rank() == 2 && x.rows() == 1) return x;
  throw InvalidArgument("expected a single example, got shape " + shape_string(x.shape()));
}

std::string fmt(Real v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

SuiteAttack identity_attack() {
  return {"natural", [](const Tensor& x, std::span<const int>) { return x; }};
}

SuiteAttack make_suite_attack(const Network& net, const AttackSpec& spec, const ThreatModel& tm, std::uint64_t seed,
                              const AttackContext& ctx) {
  spec.validate();
  const Network* n = &net;
  return {spec.name, [n, spec, tm, seed, ctx](const Tensor& x, std::span<const int> y) {
            Rng rng = make_rng(seed, 0);
            return plus(x, run_attack(*n, x, y, tm, spec, rng, ctx).delta);
          }};
}

Real EvalReport::accuracy_of(const std::string& attack) const {
  for (std::size_t i = 0; i < attacks.size(); ++i)
    if (attacks[i] == attack) return accuracy[i];
  throw InvalidArgument("report has no attack '" + attack + "'");
}

EvalReport robust_accuracy(const Predictor& predict, const Tensor& x, std::span<const int> y,
                           std::span<const SuiteAttack> suite, std::string model) {
  if (suite.empty()) throw InvalidArgument("robust_accuracy: empty attack suite");
  if (y.empty()) throw InvalidArgument("robust_accuracy: empty dataset");
  if (x.rank() != 2 || x.rows() != y.size()) throw InvalidArgument("robust_accuracy: features and labels disagree");
  const auto n = y.size();
  EvalReport r;
  r.model = std::move(model);
  r.n = n;
  const auto nat = predict(x);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < n; ++i) ok += nat.at(i) == y[i];
  r.natural_accuracy = static_cast<Real>(ok) / static_cast<Real>(n);
  r.worst_case_correct.assign(n, true);
  for (const auto& a : suite) {
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor xa = a.run(x, y);
    if (xa.shape() != x.shape()) throw InvalidArgument("attack '" + a.name + "' changed the input shape");
    const auto pred = predict(xa);
    std::size_t c = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool right = pred.at(i) == y[i];
      c += right;
      r.worst_case_correct[i] = r.worst_case_correct[i] && right;
    }
    r.attacks.push_back(a.name);
    r.accuracy.push_back(static_cast<Real>(c) / static_cast<Real>(n));
    r.runtime_ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  const auto robust = std::count(r.worst_case_correct.begin(), r.worst_case_correct.end(), true);
  r.robust_accuracy = static_cast<Real>(robust) / static_cast<Real>(n);
  return r;
}

EvalReport robust_accuracy(const Network& net, const Dataset& data, std::span<const SuiteAttack> suite,
                           std::string model) {
  data.validate();
  if (net.input_dim() != data.dim()) throw InvalidArgument("robust_accuracy: model and dataset dims differ");
  return robust_accuracy([&](const Tensor& x) { return predict(net, x); }, data.features, data.labels, suite,
                         std::move(model));
}

void write_csv(std::ostream& os, std::span<const EvalReport> reports) {
  os << "model,attack,n,accuracy,natural_accuracy,robust_accuracy\n";
  for (const auto& r : reports) {
    if (r.model.find_first_of(",\n\"") != std::string::npos)
      throw InvalidArgument("model name '" + r.model + "' cannot be written to CSV");
    for (std::size_t i = 0; i < r.attacks.size(); ++i) {
      os << r.model << ',' << r.attacks[i] << ',' << r.n << ',' << fmt(r.accuracy[i]) << ','
         << fmt(r.natural_accuracy) << ',' << fmt(r.robust_accuracy) << '\n';
    }
  }
}

void write_json(std::ostream& os, std::span<const EvalReport> reports) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["model"] = r.model;
    j["n"] = r.n;
    j["natural_accuracy"] = r.natural_accuracy;
    j["robust_accuracy"] = r.robust_accuracy;
    auto attacks = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < r.attacks.size(); ++i)
      attacks.push_back({{"attack", r.attacks[i]}, {"accuracy", r.accuracy[i]}, {"runtime_ms", r.runtime_ms[i]}});
    j["attacks"] = attacks;
    std::vector<int> mask(r.worst_case_correct.begin(), r.worst_case_correct.end());
    j["worst_case_correct"] = mask;
    arr.push_back(j);
  }
  os << arr.dump(2) << '\n';
}

std::vector<CsvRow> read_csv_report(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "model,attack,n,accuracy,natural_accuracy,robust_accuracy")
    throw IoError("not an evaluation report (bad header)");
  std::vector<CsvRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (cells.size() != 6) throw IoError("report line " + std::to_string(lineno) + ": expected 6 columns");
    try {
      rows.push_back({cells[0], cells[1], std::stoul(cells[2]), std::stod(cells[3]), std::stod(cells[4]),
                      std::stod(cells[5])});
    } catch (const std::exception&) {
      throw IoError("report line " + std::to_string(lineno) + ": not a number");
    }
  }
  return rows;
}

Real diversity_l2(std::span<const Tensor> samples) {
  if (samples.size() < 2) throw InvalidArgument("diversity_l2 needs at least two samples");
  const auto d = samples[0].size();
  for (const auto& s : samples)
    if (s.size() != d) throw InvalidArgument("diversity_l2: samples differ in size");
  Real total = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = i + 1; j < samples.size(); ++j, ++pairs) {
      Real s = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const Real e = samples[i][k] - samples[j][k];
        s += e * e;
      }
      total += std::sqrt(s);
    }
  return total / static_cast<Real>(pairs);
}

Tensor input_gradient(const Network& net, const Tensor& x, std::span<const int> y, const Loss& loss) {
  Tape tape;
  Var xv = tape.leaf(x);
  auto params = bind_parameters(net, tape, ParamMode::constants);
  Var logits = apply(net, params, xv);
  Var nat = loss.needs_natural() ? tape.constant(infer(net, x)) : Var{};
  return tape.backward(sum(loss.rows(logits, y, nat))).of(xv);
}

LossSurface loss_surface_grid(const Network& net, const Tensor& x, int y, const ThreatModel& tm,
                              std::size_t resolution, std::uint64_t seed, const Loss& loss) {
  tm.validate();
  if (resolution < 3) throw InvalidArgument("loss_surface_grid: resolution must be at least 3");
  const Tensor x0 = as_row(x);
  const auto d = x0.cols();
  if (d < 2) throw InvalidArgument("loss_surface_grid needs at least two input dimensions");
  const int label[] = {y};
  Rng rng = make_rng(seed, 0);
  LossSurface s;
  const Tensor g = input_gradient(net, x0, label, loss);
  std::vector<Real> dg(g.data().begin(), g.data().end());
  std::vector<std::vector<Real>> basis;
  if (l2_norm(dg) > 0) {
    normalize(dg);
  } else {
    s.gradient_fallback = true;
    dg = gaussian_vector(d, rng);
    normalize(dg);
  }
  basis.push_back(dg);
  std::vector<Real> dr;
  do {
    dr = gaussian_vector(d, rng);
    orthogonalize(dr, basis);
  } while (l2_norm(dr) < 1e-8);
  normalize(dr);

  const auto n = resolution;
  for (std::size_t i = 0; i < n; ++i)
    s.offsets.push_back(tm.epsilon * (2.0 * static_cast<Real>(i) / static_cast<Real>(n - 1) - 1.0));
  Tensor pts({n * n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < d; ++k)
        pts.at(i * n + j, k) = x0[k] + s.offsets[i] * dg[k] + s.offsets[j] * dr[k];
  std::vector<int> labels(n * n, y);
  Tape tape;
  auto params = bind_parameters(net, tape, ParamMode::constants);
  Var logits = apply(net, params, tape.constant(pts));
  Var nat;
  if (loss.needs_natural()) {
    Tensor base({n * n, d});
    for (std::size_t r = 0; r < n * n; ++r)
      for (std::size_t k = 0; k < d; ++k) base.at(r, k) = x0[k];
    nat = apply(net, params, tape.constant(base));
  }
  s.loss = loss.rows(logits, labels, nat).value().reshaped({n, n});
  s.d_g = Tensor({d}, std::move(dg));
  s.d_r = Tensor({d}, std::move(dr));
  return s;
}

EigenEstimate dominant_eigenvalue(const std::function<Tensor(const Tensor&)>& hv, std::size_t dim, std::size_t iters,
                                  Real tol, std::uint64_t seed) {
  if (iters < 1) throw InvalidArgument("dominant_eigenvalue: iters must be at least 1");
  if (dim < 1) throw InvalidArgument("dominant_eigenvalue: empty space");
  Rng rng = make_rng(seed, 0);
  auto v0 = gaussian_vector(dim, rng);
  normalize(v0);
  Tensor v({dim}, std::move(v0));
  EigenEstimate e;
  Real prev = 0;
  for (std::size_t k = 1; k <= iters; ++k) {
    const Tensor w = hv(v);
    if (w.size() != dim) throw InvalidArgument("dominant_eigenvalue: product has the wrong size");
    const Real lambda = dot(v.data(), w.data());
    const Real wn = l2_norm(w.data());
    e.value = std::abs(lambda);
    e.iterations = k;
    if (!std::isfinite(wn)) throw NumericError("dominant_eigenvalue: non-finite Hessian-vector product");
    if (wn == 0) {
      e.converged = true;
      return e;
    }
    Real resid = 0;
    for (std::size_t i = 0; i < dim; ++i) resid += (w[i] - lambda * v[i]) * (w[i] - lambda * v[i]);
    if (std::sqrt(resid) <= tol * std::max<Real>(1.0, std::abs(lambda)) || (k > 1 && std::abs(lambda - prev) < tol)) {
      e.converged = true;
      return e;
    }
    prev = lambda;
    for (std::size_t i = 0; i < dim; ++i) v[i] = w[i] / wn;
  }
  return e;
}

EigenEstimate dominant_hessian_eigenvalue(const Network& net, const Tensor& x, int y, std::size_t iters, Real tol,
                                          std::uint64_t seed, const Loss& loss) {
  const Tensor x0 = as_row(x);
  const auto d = x0.cols();
  const int label[] = {y};
  const Tensor flat = x0.reshaped({d});
  GradientFn grad = [&](const Tensor& p) { return input_gradient(net, p.reshaped({1, d}), label, loss).reshaped({d}); };
  return dominant_eigenvalue([&](const Tensor& v) { return hvp(grad, flat, v); }, d, iters, tol, seed);
}

PcaResult pca_project(std::span<const Tensor> samples) {
  const auto n = samples.size();
  if (n < 3) throw InvalidArgument("pca_project needs at least three samples");
  const auto d = samples[0].size();
  if (d < 2) throw InvalidArgument("pca_project needs dimension at least 2");
  for (const auto& s : samples)
    if (s.size() != d) throw InvalidArgument("pca_project: samples differ in size");
  std::vector<Real> mean(d, 0.0);
  for (const auto& s : samples)
    for (std::size_t k = 0; k < d; ++k) mean[k] += s[k] / static_cast<Real>(n);
  std::vector<std::vector<Real>> c(n, std::vector<Real>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) c[i][k] = samples[i][k] - mean[k];
  std::vector<Real> cov(d * d, 0.0);
  for (const auto& row : c)
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += row[a] * row[b] / static_cast<Real>(n - 1);
  auto apply_cov = [&](const std::vector<Real>& v) {
    std::vector<Real> w(d, 0.0);
    for (std::size_t a = 0; a < d; ++a) w[a] = dot(std::span<const Real>(cov).subspan(a * d, d), v);
    return w;
  };
  Real trace = 0;
  for (std::size_t a = 0; a < d; ++a) trace += cov[a * d + a];
  if (!(trace > 0)) throw InvalidArgument("pca_project: samples are all identical");

  std::vector<std::vector<Real>> comps;
  PcaResult out;
  for (int m = 0; m < 2; ++m) {
    // Start from the sample with the largest residual after removing earlier components.
    std::vector<Real> v;
    Real best = 0;
    for (const auto& row : c) {
      auto r = row;
      orthogonalize(r, comps);
      const Real nr = l2_norm(r);
      if (nr > best * (1 + 1e-12)) {
        best = nr;
        v = r;
      }
    }
    if (best <= 1e-12 * std::sqrt(trace)) {
      // No variance left: any unit vector orthogonal to the earlier components.
      std::size_t k = 0;
      for (std::size_t j = 1; j < d; ++j)
        if (std::abs(comps[0][j]) < std::abs(comps[0][k])) k = j;
      v.assign(d, 0.0);
      v[k] = 1;
      orthogonalize(v, comps);
      normalize(v);
      comps.push_back(v);
      out.explained[m] = 0;
      continue;
    }
    normalize(v);
    for (int it = 0; it < 10000; ++it) {
      auto w = apply_cov(v);
      orthogonalize(w, comps);
      const Real wn = l2_norm(w);
      if (wn == 0) break;
      Real change = 0;
      for (std::size_t k = 0; k < d; ++k) {
        const Real nv = w[k] / wn;
        change = std::max(change, std::abs(nv - v[k]));
        v[k] = nv;
      }
      if (change < 1e-13) break;
    }
    orthogonalize(v, comps);
    normalize(v);
    out.explained[m] = std::max<Real>(0.0, dot(v, apply_cov(v)));
    comps.push_back(v);
  }
  if (out.explained[1] > out.explained[0]) {
    std::swap(out.explained[0], out.explained[1]);
    std::swap(comps[0], comps[1]);
  }
  out.components = Tensor({2, d});
  out.coords = Tensor({n, 2});
  for (std::size_t m = 0; m < 2; ++m) {
    for (std::size_t k = 0; k < d; ++k) out.components.at(m, k) = comps[m][k];
    for (std::size_t i = 0; i < n; ++i) out.coords.at(i, m) = dot(c[i], comps[m]);
  }
  return out;
}

void write_pca_csv(std::ostream& os, const PcaResult& pca) {
  os << "index,pc1,pc2\n";
  char buf[96];
  for (std::size_t i = 0; i < pca.coords.rows(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", i, pca.coords.at(i, 0), pca.coords.at(i, 1));
    os << buf;
  }
}

Real transfer_eval(const Network& source, const Network& target, const Dataset& data, const AttackSpec& spec,
                   const ThreatModel& tm, std::uint64_t seed) {
  data.validate();
  if (source.input_dim() != target.input_dim() || source.input_dim() != data.dim())
    throw InvalidArgument("transfer_eval: source, target and data dims differ");
  const auto attack = make_suite_attack(source, spec, tm, seed);
  const auto pred = predict(target, attack.run(data.features, data.labels));
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == data.labels[i];
  return static_cast<Real>(ok) / static_cast<Real>(pred.size());
}

}  // namespace adt
