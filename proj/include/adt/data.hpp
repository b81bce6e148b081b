#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adt/tensor.hpp"

namespace adt {

/// Features in [0, 1] (n x d) with labels in [0, classes).
struct Dataset {
  Tensor features;
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  void validate() const;

  Dataset subset(std::span<const std::size_t> idx) const;
  Dataset head(std::size_t n) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

enum class SyntheticKind { two_moons, blobs, circles };

std::string to_string(SyntheticKind k);
SyntheticKind synthetic_kind_from_string(const std::string& s);

/// Two-class 2-D toy sets, classes alternating by index, min-max scaled into [0, 1]^2.
Dataset make_synthetic(SyntheticKind kind, std::size_t n, double noise, std::uint64_t seed);

// IDX files (images magic 0x00000803, labels 0x00000801); pixels scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

// Rows of comma-separated features with the integer label in the last column.
// Features outside [0, 1] are rejected unless `normalize` rescales them per column.
Dataset load_csv(const std::filesystem::path& path, bool normalize);

// Per-column min-max scaling into [0, 1]; constant columns map to 0.
void minmax_scale(Tensor& features);

/// Seeded shuffle then split; the first part holds round(fraction * n) rows.
std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, std::uint64_t seed);

}  // namespace adt
