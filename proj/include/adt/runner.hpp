#pragma once

#include <exception>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "adt/config.hpp"

namespace adt {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIo = 4;

int exit_code_for(const std::exception& e);

Dataset load_dataset(const DatasetConfig& cfg);
// Seeded train/test split of the configured dataset.
std::pair<Dataset, Dataset> load_splits(const DatasetConfig& cfg);

struct StageOutcome {
  int exit_code = kExitOk;
  std::string error;
  std::vector<std::string> artifacts;  // file names under the output dir
};

/// Runs "train", "attack", "eval", "landscape" or "run" (train, attack, eval).
/// Never throws; always writes manifest.json listing what was produced.
StageOutcome run_stage(const ExperimentConfig& cfg, const std::string& stage);

/// Joins report.csv from several run dirs into one model x attack table.
/// Returns the CSV text; missing cells are empty.
std::string join_reports(const std::vector<std::filesystem::path>& run_dirs);
// Fixed-width rendering of a joined report for terminals.
std::string format_table(const std::string& joined_csv);

}  // namespace adt
