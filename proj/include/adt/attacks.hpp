#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adt/losses.hpp"
#include "adt/network.hpp"
#include "adt/perturb.hpp"
#include "adt/rng.hpp"

namespace adt {

enum class AttackKind { fgsm, iterative, spsa, feature, dist_exp, dist_amortized };

std::string to_string(AttackKind k);
AttackKind attack_kind_from_string(const std::string& s);

struct SpsaOptions {
  std::size_t batch = 256;  // Rademacher directions per estimate (2 queries each)
  Real perturb_size = 1e-3;
  Real lr = 0.01;
  std::size_t iters = 100;

  friend bool operator==(const SpsaOptions&, const SpsaOptions&) = default;
};

struct FeatureOptions {
  std::size_t num_targets = 8;
  std::size_t steps = 20;
  Real step_size = 0.0;  // 0 -> eps / 8

  friend bool operator==(const FeatureOptions&, const FeatureOptions&) = default;
};

struct DistOptions {
  Real lambda = 0.01;
  std::size_t steps = 20;
  std::size_t samples = 10;
  Real lr = 0.3;
  bool antithetic = false;

  friend bool operator==(const DistOptions&, const DistOptions&) = default;
};

struct AttackSpec {
  AttackKind kind = AttackKind::iterative;
  std::string name;
  // Overrides the threat model radius when set.
  std::optional<Real> epsilon;
  Real step_size = 0.0;  // 0 -> eps / 4
  std::size_t steps = 20;
  Real momentum_decay = 0.0;
  Loss loss;
  bool random_start = true;
  std::size_t restarts = 1;
  SpsaOptions spsa;
  FeatureOptions feature;
  DistOptions dist;

  static AttackSpec fgsm();
  static AttackSpec pgd(std::size_t steps);
  static AttackSpec mim(std::size_t steps);
  static AttackSpec cw(std::size_t steps);
  static AttackSpec spsa_default();
  static AttackSpec feature_default();
  static AttackSpec dist_exp_default();
  static AttackSpec dist_amortized_default();

  void validate() const;
  ThreatModel threat(const ThreatModel& tm) const;
  Real resolved_step(const ThreatModel& tm) const;

  friend bool operator==(const AttackSpec&, const AttackSpec&) = default;
};

/// Perturbations for a batch of inputs, one row each.
struct AdvResult {
  Tensor delta;
  std::vector<bool> success;     // misclassified at x + delta
  std::vector<Real> loss_trace;  // batch-mean loss per iterate

  std::size_t successes() const;
};

// sign(0) = 0.
Real sign(Real v);

AdvResult fgsm(const Network& net, const Tensor& x, std::span<const int> y, const ThreatModel& tm,
               const Loss& loss = {});

// FGSM toward `targets`: descends the target-class cross-entropy.
AdvResult targeted_fgsm(const Network& net, const Tensor& x, std::span<const int> targets, std::span<const int> y,
                        const ThreatModel& tm);

/// PGD / MIM / CW. Each restart keeps, per example, the iterate that
/// misclassifies with the highest loss, else the highest-loss iterate.
AdvResult iterative_attack(const Network& net, const Tensor& x, std::span<const int> y, const ThreatModel& tm,
                           const AttackSpec& spec, Rng& rng);

/// Query-only view of a classifier: maps a (rows x d) batch to logits.
class QueryModel {
 public:
  using Fn = std::function<Tensor(const Tensor&)>;
  explicit QueryModel(Fn fn) : fn_(std::move(fn)) {}
  static QueryModel of(const Network& net);

  Tensor logits(const Tensor& x) const;
  std::size_t queries() const { return queries_; }

 private:
  Fn fn_;
  mutable std::size_t queries_ = 0;
};

// Per-row loss of a batch of points; the SPSA estimator only sees this.
using BatchLossFn = std::function<Tensor(const Tensor&)>;

/// mean over `batch` Rademacher directions of [L(x + c D) - L(x - c D)] / (2 c D_j).
Tensor spsa_gradient(const BatchLossFn& loss, const Tensor& x, Real c, std::size_t batch, Rng& rng);

AdvResult spsa_attack(const QueryModel& model, const Tensor& x, std::span<const int> y, const ThreatModel& tm,
                      const AttackSpec& spec, Rng& rng);

/// Cosine-similarity descent toward the penultimate features of targets from
/// other classes in the pool; success if any run misclassifies.
AdvResult feature_attack(const Network& net, const Tensor& x, std::span<const int> y, const Tensor& pool_x,
                         std::span<const int> pool_y, const ThreatModel& tm, const AttackSpec& spec, Rng& rng);

struct DistAttackResult {
  TanhGaussianParams params;
  AdvResult adv;
};

/// T Adam(0, 0) ascent steps on the explicit objective, then the best of k
/// samples from the learned distribution.
DistAttackResult dist_attack_exp(const Network& net, const Tensor& x, std::span<const int> y, const ThreatModel& tm,
                                 const AttackSpec& spec, Rng& rng);

AdvResult dist_attack_amortized(const ExplicitGenerator& gen, const Network& net, const Tensor& x,
                                std::span<const int> y, const ThreatModel& tm, Rng& rng);
AdvResult dist_attack_amortized(const ImplicitSampler& s, const Network& net, const Tensor& x, std::span<const int> y,
                                const ThreatModel& tm, Rng& rng);

// Extra inputs some attack kinds need.
struct AttackContext {
  const Tensor* pool_x = nullptr;
  std::span<const int> pool_y;
  const ExplicitGenerator* explicit_gen = nullptr;
  const ImplicitSampler* implicit_gen = nullptr;
};

AdvResult run_attack(const Network& net, const Tensor& x, std::span<const int> y, const ThreatModel& tm,
                     const AttackSpec& spec, Rng& rng, const AttackContext& ctx = {});

// Per-row misclassification of x + delta.
std::vector<bool> misclassified(const Network& net, const Tensor& x_adv, std::span<const int> y);

}  // namespace adt
