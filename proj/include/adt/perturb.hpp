#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>

#include "adt/losses.hpp"
#include "adt/network.hpp"
#include "adt/rng.hpp"

namespace adt {

/// l-infinity ball of radius epsilon, optionally intersected with a pixel box.
struct ThreatModel {
  Real epsilon = 8.0 / 255.0;
  std::optional<std::pair<Real, Real>> pixel_box;

  void validate() const;
  // Projects a perturbation onto the ball, then x + delta onto the box (in place, row-aligned).
  void project(const Tensor& x, Tensor& delta) const;

  friend bool operator==(const ThreatModel&, const ThreatModel&) = default;
};

// Box constraints on the tanh-Gaussian parameters.
struct ClipBounds {
  Real mu_max = 4.0;
  Real sigma_min = 1e-3;
  Real sigma_max = 4.0;
};

// Pre-tanh arguments are clamped to this magnitude when sampling so every
// emitted perturbation stays strictly inside the ball.
inline constexpr Real kTanhArgLimit = 15.0;

Real softplus(Real x);
Real softplus_inverse(Real y);

/// Per-input parameters of delta = eps * tanh(mu + sigma * r), r ~ N(0, I).
/// sigma = softplus(sigma_raw). Matrices hold one distribution per row.
struct TanhGaussianParams {
  Tensor mu;
  Tensor sigma_raw;

  // mu = 0, sigma = 1.
  static TanhGaussianParams initial(std::size_t rows, std::size_t dim);

  Tensor sigma() const;
  std::size_t dim() const { return mu.cols(); }
  void clip(const ClipBounds& bounds = {});
};

struct ExplicitSample {
  Tensor delta;
  Tensor noise;  // the r that produced delta
};

ExplicitSample sample_explicit(const TanhGaussianParams& params, const ThreatModel& tm, Rng& rng);

/// Negative log-density of the sample produced by noise r (summed over all
/// entries of r):  sum_j r^2/2 + log(2 pi)/2 + log sigma + log(1 - tanh(u)^2) + log eps.
Real neg_log_density(const TanhGaussianParams& params, const ThreatModel& tm, const Tensor& noise);

// Differentiable building blocks. `noise` has k rows per row of mu/sigma.
Var tanh_gaussian_delta(Var mu, Var sigma, const Tensor& noise, Real epsilon);
Var neg_log_density_rows(Var mu, Var sigma, const Tensor& noise, Real epsilon);

/// Terms of J = E[L] + lambda * H per example, from k weighted samples each.
struct ObjectiveTerms {
  Var j;        // (rows)
  Var loss;     // (rows) weighted mean classification loss
  Var entropy;  // (rows) weighted mean of -log p, or the entropy bound
};

struct ExplicitObjectiveInput {
  const Network* net = nullptr;
  std::span<const Var> net_params;
  const Tensor* x = nullptr;  // (rows x d)
  std::span<const int> labels;
  Var mu;
  Var sigma;
  const Tensor* noise = nullptr;  // (rows*k x d)
  std::size_t samples = 1;
  // Per-sample weights; uniform 1/k when empty.
  std::span<const Real> weights;
  Real lambda = 0.0;
  const ThreatModel* tm = nullptr;
  Loss loss;
};

ObjectiveTerms explicit_objective(Tape& tape, const ExplicitObjectiveInput& in);

struct McOptions {
  std::size_t samples = 5;
  Real lambda = 0.01;
  // Pair every draw r with -r (k must be even).
  bool antithetic = false;
};

Tensor draw_noise(std::size_t rows, std::size_t dim, std::size_t samples, bool antithetic, Rng& rng);

struct InnerEstimate {
  Tensor j;        // (rows) MC estimate of J per example
  Tensor loss;     // (rows)
  Tensor entropy;  // (rows)
  Tensor grad_mu;         // dJ/dmu, per example
  Tensor grad_sigma_raw;  // dJ/dsigma_raw
};

/// Monte Carlo estimate of J and its pathwise gradient w.r.t. the
/// distribution parameters, one independent distribution per row of x.
InnerEstimate inner_objective_exp(const Network& net, const Tensor& x, std::span<const int> labels,
                                  const TanhGaussianParams& params, const ThreatModel& tm, const Loss& loss,
                                  const McOptions& mc, Rng& rng);

// ---------------------------------------------------------------------------
// Amortized generators

/// Generator input [x, g1, g2]: loss gradients at x and at the FGSM point of x.
Tensor conditioning_input(const Network& classifier, const Tensor& x, std::span<const int> labels,
                          const ThreatModel& tm);

/// Maps [x, g1, g2] (3d) to (mu, sigma) heads (2d).
struct ExplicitGenerator {
  Network net;
  ClipBounds clip;
  bool trained = false;

  static ExplicitGenerator create(std::size_t dim, std::span<const std::size_t> hidden, Rng& rng);
  std::size_t dim() const { return net.output_dim() / 2; }
};

struct GeneratorHeads {
  Var mu;
  Var sigma;
};

GeneratorHeads explicit_heads(const ExplicitGenerator& gen, std::span<const Var> params, Var conditioning);

TanhGaussianParams amortized_explicit_params(const ExplicitGenerator& gen, const Tensor& x, const Tensor& g1,
                                             const Tensor& g2, const ThreatModel& tm);

/// delta = eps * tanh(g(z, x, g1, g2)), z ~ U(-1, 1)^z_dim.
struct ImplicitSampler {
  Network generator;  // (z_dim + 3d) -> d
  std::size_t z_dim = 8;
  bool trained = false;

  static ImplicitSampler create(std::size_t dim, std::size_t z_dim, std::span<const std::size_t> hidden, Rng& rng);
  std::size_t dim() const { return generator.output_dim(); }
};

struct ImplicitDraw {
  Tensor delta;
  Tensor z;
};

Tensor draw_latent(std::size_t rows, std::size_t z_dim, Rng& rng);
Var implicit_delta(const ImplicitSampler& s, std::span<const Var> params, Var z, Var conditioning, Real epsilon);
ImplicitDraw sample_implicit(const ImplicitSampler& s, const Tensor& x, const Tensor& g1, const Tensor& g2,
                             const ThreatModel& tm, Rng& rng);

/// Diagonal Gaussian q(z | delta) with mean and log-std emitted by q_net.
struct VariationalPosterior {
  Network q_net;  // d -> 2 * z_dim
  Real log_std_min = -5.0;
  Real log_std_max = 2.0;

  static VariationalPosterior create(std::size_t dim, std::size_t z_dim, std::span<const std::size_t> hidden,
                                     Rng& rng);
  std::size_t z_dim() const { return q_net.output_dim() / 2; }
};

/// log q(z | delta) per row, without the additive constant of the bound.
Var entropy_lower_bound_rows(const VariationalPosterior& q, std::span<const Var> params, Var z, Var delta);
// Mean over rows of log q(z | delta).
Real entropy_lower_bound(const VariationalPosterior& q, const Tensor& z, const Tensor& delta);

}  // namespace adt
