#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "adt/attacks.hpp"
#include "adt/data.hpp"
#include "adt/optim.hpp"
#include "adt/perturb.hpp"

namespace adt {

enum class TrainMethod { standard, at_fgsm, at_pgd, adt_exp, adt_exp_am, adt_imp_am };

std::string to_string(TrainMethod m);
TrainMethod train_method_from_string(const std::string& s);

struct InnerConfig {
  std::size_t steps = 7;
  std::size_t samples = 5;
  Real lambda = 0.01;
  Real lr = 0.3;
  bool antithetic = false;

  friend bool operator==(const InnerConfig&, const InnerConfig&) = default;
};

struct TrainSpec {
  TrainMethod method = TrainMethod::standard;
  Loss loss;  // cross_entropy or trades
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  std::vector<std::size_t> hidden{16, 16};
  OptimizerConfig classifier = OptimizerConfig::sgd(0.1, 0.9, 2e-4);
  // Multiply the classifier lr by lr_decay at these epochs.
  std::vector<std::size_t> lr_milestones;
  Real lr_decay = 0.1;
  InnerConfig inner;
  // PGD used by at_pgd.
  std::size_t pgd_steps = 7;
  Real pgd_step_size = 0.0;  // 0 -> eps / 4
  std::vector<std::size_t> generator_hidden{32};
  std::size_t z_dim = 8;
  OptimizerConfig generator = OptimizerConfig::adam(2e-4, 0.5, 0.999);
  OptimizerConfig posterior = OptimizerConfig::adam(2e-4, 0.5, 0.999);
  ThreatModel threat{8.0 / 255.0, std::pair<Real, Real>{0.0, 1.0}};
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const TrainSpec&, const TrainSpec&) = default;
};

struct StepRecord {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  std::size_t batch = 0;
  Real j = 0;
  Real loss = 0;
  std::optional<Real> entropy;
  std::optional<Real> sigma_mean, sigma_min, sigma_max;
  double wall_ms = 0;
};

/// Append-only training log with a monotone step index.
class RunLog {
 public:
  void append(StepRecord r);
  const std::vector<StepRecord>& records() const { return records_; }
  bool empty() const { return records_.empty(); }

  std::string snapshot_id;

  void write_jsonl(std::ostream& os) const;
  // Records equal in every field except wall time.
  bool same_trajectory(const RunLog& other) const;
  // Mean of a field over the records of one epoch (the last when epoch is empty).
  Real epoch_mean(Real StepRecord::*field, std::optional<std::size_t> epoch = {}) const;
  Real epoch_mean_entropy(std::optional<std::size_t> epoch = {}) const;

 private:
  std::vector<StepRecord> records_;
};

struct TrainResult {
  Network net;
  std::optional<ExplicitGenerator> explicit_gen;
  std::optional<ImplicitSampler> implicit_gen;
  std::optional<VariationalPosterior> posterior;
  RunLog log;
};

Network make_classifier(const TrainSpec& spec, std::size_t input_dim, std::size_t classes);

/// Runs the method named by spec.method. `init` replaces the seeded classifier
/// initialization when given.
TrainResult train(const TrainSpec& spec, const Dataset& data, const Network* init = nullptr);

/// MC estimate of J = E[L] + lambda * H for an explicit distribution per row
/// (mean over rows), with k fresh samples.
Real objective_j(const Network& net, const Tensor& x, std::span<const int> y, const TanhGaussianParams& dist,
                 const ThreatModel& tm, const Loss& loss, Real lambda, std::size_t k, Rng& rng);

/// Implicit version: H replaced by the variational bound E[log q(z | delta)].
Real objective_j(const Network& net, const Tensor& x, std::span<const int> y, const ImplicitSampler& sampler,
                 const VariationalPosterior& q, const ThreatModel& tm, const Loss& loss, Real lambda, std::size_t k,
                 Rng& rng);

// Mean over rows of CE(f(x), y) + beta * KL(f(x + delta) || f(x)).
Real trades_objective(const Network& net, const Tensor& x, std::span<const int> y, const Tensor& delta, Real beta);

// Little-endian snapshot: "ADTSNAP1", u32 version, u32 layers, per layer
// (u32 in, u32 out, u32 activation), then f64 weights (row-major) and biases per layer.
void save_snapshot(const Network& net, const std::filesystem::path& path);
Network load_snapshot(const std::filesystem::path& path);
std::vector<unsigned char> snapshot_bytes(const Network& net);
Network snapshot_from_bytes(const std::vector<unsigned char>& bytes);

}  // namespace adt
