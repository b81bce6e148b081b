#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adt/attacks.hpp"
#include "adt/data.hpp"
#include "adt/trainers.hpp"

namespace adt {

struct DatasetConfig {
  std::string source = "synthetic";  // synthetic | csv | idx
  SyntheticKind kind = SyntheticKind::two_moons;
  std::size_t n = 1000;
  Real noise = 0.1;
  std::string csv;
  std::string images, labels;
  bool normalize = false;
  Real train_fraction = 0.8;
  std::uint64_t split_seed = 0;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct EvalConfig {
  bool natural = true;               // put the identity attack first in the suite
  std::size_t max_examples = 0;      // 0 = whole test split
  bool hessian = false;
  std::size_t hessian_points = 50;
  std::size_t hessian_iters = 100;
  Real hessian_tol = 1e-6;
  bool landscape = false;
  std::size_t landscape_points = 1;
  std::size_t resolution = 41;
  bool pca = false;                  // dist_exp samples around the first test point
  std::size_t pca_samples = 100;

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  std::string model_name;  // empty -> method name
  DatasetConfig dataset;
  TrainSpec train;  // train.threat and train.seed mirror threat_model and seed
  std::vector<AttackSpec> attacks{AttackSpec::pgd(20)};
  EvalConfig eval;

  std::string display_name() const { return model_name.empty() ? to_string(train.method) : model_name; }
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Parses a JSON config; unknown keys and out-of-range values raise ConfigError
// naming the dotted field path. Parse errors report line and column.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& cfg);

// Applies "dotted.path=value" to the JSON text before parsing. The value is
// read as JSON when it parses, otherwise as a string.
std::string apply_override(const std::string& text, const std::string& assignment);

// Shorthand attack names: fgsm, pgd-N, mim-N, cw-N, spsa, feature, dist_exp, dist_amortized.
AttackSpec attack_from_name(const std::string& name);

}  // namespace adt
