#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "adt/attacks.hpp"
#include "adt/data.hpp"

namespace adt {

// Class predictions for a batch of inputs (ties go to the lowest index).
using Predictor = std::function<std::vector<int>(const Tensor& x)>;
// Produces the inputs to classify for a batch (x, y); the identity attack returns x.
using AttackFn = std::function<Tensor(const Tensor& x, std::span<const int> y)>;

struct SuiteAttack {
  std::string name;
  AttackFn run;
};

SuiteAttack identity_attack();

/// White-box attack against `net`, seeded with derive_seed(seed, 0) on every call.
SuiteAttack make_suite_attack(const Network& net, const AttackSpec& spec, const ThreatModel& tm, std::uint64_t seed,
                              const AttackContext& ctx = {});

struct EvalReport {
  std::string model;
  std::size_t n = 0;
  Real natural_accuracy = 0;
  std::vector<std::string> attacks;
  std::vector<Real> accuracy;         // per attack, suite order
  std::vector<double> runtime_ms;     // per attack
  Real robust_accuracy = 0;           // correct under every attack
  std::vector<bool> worst_case_correct;

  Real accuracy_of(const std::string& attack) const;
};

EvalReport robust_accuracy(const Predictor& predict, const Tensor& x, std::span<const int> y,
                           std::span<const SuiteAttack> suite, std::string model = "model");
EvalReport robust_accuracy(const Network& net, const Dataset& data, std::span<const SuiteAttack> suite,
                           std::string model = "model");

// CSV columns: model,attack,n,accuracy,natural_accuracy,robust_accuracy.
// No timing, so reruns are byte-identical.
void write_csv(std::ostream& os, std::span<const EvalReport> reports);
// JSON array of reports including per-attack runtime.
void write_json(std::ostream& os, std::span<const EvalReport> reports);

struct CsvRow {
  std::string model, attack;
  std::size_t n = 0;
  Real accuracy = 0, natural_accuracy = 0, robust_accuracy = 0;
};
std::vector<CsvRow> read_csv_report(std::istream& is);

/// Mean pairwise l2 distance over unordered pairs.
Real diversity_l2(std::span<const Tensor> samples);

// Gradient of the summed per-row loss w.r.t. the input rows.
Tensor input_gradient(const Network& net, const Tensor& x, std::span<const int> y, const Loss& loss = {});

struct LossSurface {
  std::vector<Real> offsets;  // shared by both axes, spanning [-eps, eps]
  Tensor loss;                // (resolution x resolution), row = gradient axis
  Tensor d_g, d_r;            // unit directions
  bool gradient_fallback = false;  // zero gradient: both directions random
};

/// Loss over x + a d_g + b d_r with d_g the normalized input gradient and d_r a
/// seeded random direction orthogonal to it. Not clipped to the pixel box.
LossSurface loss_surface_grid(const Network& net, const Tensor& x, int y, const ThreatModel& tm,
                              std::size_t resolution = 41, std::uint64_t seed = 0, const Loss& loss = {});

struct EigenEstimate {
  Real value = 0;  // |lambda| of the dominant eigenvalue
  std::size_t iterations = 0;
  bool converged = false;
};

/// Power iteration with a Rayleigh readout on an arbitrary Hessian-vector product.
EigenEstimate dominant_eigenvalue(const std::function<Tensor(const Tensor&)>& hv, std::size_t dim,
                                  std::size_t iters, Real tol, std::uint64_t seed = 0);

/// Dominant eigenvalue of the input Hessian of the loss at a single example.
EigenEstimate dominant_hessian_eigenvalue(const Network& net, const Tensor& x, int y, std::size_t iters = 100,
                                          Real tol = 1e-6, std::uint64_t seed = 0, const Loss& loss = {});

struct PcaResult {
  Tensor coords;                 // (n x 2)
  std::array<Real, 2> explained;  // variance along each component, nonincreasing
  Tensor components;             // (2 x d), orthonormal rows
};

PcaResult pca_project(std::span<const Tensor> samples);
void write_pca_csv(std::ostream& os, const PcaResult& pca);

/// Accuracy of `target` on adversarial examples crafted against `source`.
Real transfer_eval(const Network& source, const Network& target, const Dataset& data, const AttackSpec& spec,
                   const ThreatModel& tm, std::uint64_t seed);

}  // namespace adt
