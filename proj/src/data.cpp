#include "adt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "adt/error.hpp"
#include "adt/rng.hpp"

namespace adt {

void Dataset::validate() const {
  if (labels.empty()) throw InvalidArgument("dataset is empty");
  if (features.rank() != 2 || features.rows() != labels.size()) {
    throw InvalidArgument("dataset: " + std::to_string(labels.size()) + " labels for features of shape " +
                          shape_string(features.shape()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw InvalidArgument("dataset: label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  for (Real v : features.data()) {
    if (!std::isfinite(v)) throw InvalidArgument("dataset: non-finite feature");
    if (v < 0.0 || v > 1.0) throw InvalidArgument("dataset: feature " + std::to_string(v) + " outside [0, 1]");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
  Dataset out{gather_rows(features, idx), {}, classes};
  out.labels.reserve(idx.size());
  for (auto i : idx) out.labels.push_back(labels.at(i));
  return out;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  std::iota(idx.begin(), idx.end(), 0);
  return subset(idx);
}

std::string to_string(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::two_moons: return "two_moons";
    case SyntheticKind::blobs: return "blobs";
    case SyntheticKind::circles: return "circles";
  }
  return "?";
}

SyntheticKind synthetic_kind_from_string(const std::string& s) {
  for (auto k : {SyntheticKind::two_moons, SyntheticKind::blobs, SyntheticKind::circles})
    if (to_string(k) == s) return k;
  throw InvalidArgument("unknown synthetic dataset '" + s + "' (two_moons, blobs, circles)");
}

void minmax_scale(Tensor& f) {
  const auto n = f.rows(), d = f.cols();
  for (std::size_t j = 0; j < d; ++j) {
    Real lo = f.at(0, j), hi = f.at(0, j);
    for (std::size_t i = 1; i < n; ++i) {
      lo = std::min(lo, f.at(i, j));
      hi = std::max(hi, f.at(i, j));
    }
    const Real span = hi - lo;
    for (std::size_t i = 0; i < n; ++i) f.at(i, j) = span > 0 ? std::clamp((f.at(i, j) - lo) / span, 0.0, 1.0) : 0.0;
  }
}

Dataset make_synthetic(SyntheticKind kind, std::size_t n, double noise, std::uint64_t seed) {
  if (n < 2) throw InvalidArgument("synthetic dataset needs n >= 2");
  if (!(noise >= 0)) throw InvalidArgument("synthetic dataset noise must be nonnegative");
  Rng rng = make_rng(seed, 0x5d);
  std::uniform_real_distribution<Real> angle(0.0, std::numbers::pi);
  std::uniform_real_distribution<Real> full(0.0, 2 * std::numbers::pi);
  std::normal_distribution<Real> gauss(0.0, 1.0);
  Dataset d{Tensor({n, 2}), std::vector<int>(n), 2};
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 2);
    Real a = 0, b = 0;
    switch (kind) {
      case SyntheticKind::two_moons: {
        const Real t = angle(rng);
        a = c == 0 ? std::cos(t) : 1 - std::cos(t);
        b = c == 0 ? std::sin(t) : 0.5 - std::sin(t);
        break;
      }
      case SyntheticKind::blobs:
        a = b = c == 0 ? -2.0 : 2.0;
        break;
      case SyntheticKind::circles: {
        const Real t = full(rng), r = c == 0 ? 1.0 : 0.5;
        a = r * std::cos(t);
        b = r * std::sin(t);
        break;
      }
    }
    d.features.at(i, 0) = a + noise * gauss(rng);
    d.features.at(i, 1) = b + noise * gauss(rng);
    d.labels[i] = c;
  }
  if (kind == SyntheticKind::blobs && noise == 0) {
    // Two coincident clusters: scale by the fixed centres instead of collapsing to {0, 1} per axis.
    for (auto& v : d.features.data()) v = (v + 2.0) / 4.0;
  } else {
    minmax_scale(d.features);
  }
  return d;
}

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::filesystem::path& p) {
  if (off + 4 > b.size()) throw IoError(p.string() + ": truncated header");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto ib = read_all(images);
  const auto lb = read_all(labels);
  const auto im = be32(ib, 0, images);
  if (im != 0x00000803) {
    std::ostringstream os;
    os << images.string() << ": bad magic 0x" << std::hex << im << " (expected 0x00000803)";
    throw IoError(os.str());
  }
  const auto lm = be32(lb, 0, labels);
  if (lm != 0x00000801) {
    std::ostringstream os;
    os << labels.string() << ": bad magic 0x" << std::hex << lm << " (expected 0x00000801)";
    throw IoError(os.str());
  }
  const std::size_t n = be32(ib, 4, images), rows = be32(ib, 8, images), cols = be32(ib, 12, images);
  const std::size_t nl = be32(lb, 4, labels);
  if (n != nl) throw IoError("idx: " + std::to_string(n) + " images but " + std::to_string(nl) + " labels");
  const std::size_t d = rows * cols;
  if (ib.size() < 16 + n * d) throw IoError(images.string() + ": truncated pixel data");
  if (lb.size() < 8 + n) throw IoError(labels.string() + ": truncated label data");
  if (n == 0) throw IoError("idx: no images");
  Dataset out{Tensor({n, d}), std::vector<int>(n), 0};
  for (std::size_t i = 0; i < n * d; ++i) out.features[i] = ib[16 + i] / 255.0;
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out.labels[i] = lb[8 + i];
    max_label = std::max(max_label, out.labels[i]);
  }
  out.classes = static_cast<std::size_t>(max_label) + 1;
  return out;
}

Dataset load_csv(const std::filesystem::path& path, bool normalize) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Real> feats;
  std::vector<int> labels;
  std::size_t d = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 2) throw IoError(path.string() + ":" + std::to_string(lineno) + ": need features and a label");
    std::vector<Real> row;
    try {
      for (std::size_t j = 0; j + 1 < cells.size(); ++j) row.push_back(std::stod(cells[j]));
      labels.push_back(std::stoi(cells.back()));
    } catch (const std::exception&) {
      if (labels.empty() && feats.empty()) continue;  // header row
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": not a number");
    }
    if (d == 0) d = row.size();
    if (row.size() != d) throw IoError(path.string() + ":" + std::to_string(lineno) + ": ragged row");
    feats.insert(feats.end(), row.begin(), row.end());
  }
  if (labels.empty()) throw IoError(path.string() + ": no data rows");
  Dataset out{Tensor({labels.size(), d}, std::move(feats)), std::move(labels), 0};
  if (normalize) minmax_scale(out.features);
  int max_label = 0;
  for (int y : out.labels) {
    if (y < 0) throw IoError(path.string() + ": negative label");
    max_label = std::max(max_label, y);
  }
  out.classes = static_cast<std::size_t>(max_label) + 1;
  out.validate();
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction < 1)) throw InvalidArgument("split fraction must be in (0, 1)");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed, 0x51);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto cut = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  if (cut == 0 || cut == data.size()) throw InvalidArgument("split leaves an empty part");
  std::span<const std::size_t> all(idx);
  return {data.subset(all.first(cut)), data.subset(all.subspan(cut))};
}

}  // namespace adt
