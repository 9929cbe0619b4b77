#pragma once

// Datasets: synthetic Gaussian clusters with class imbalance, min-max and
// pixel-complement normalization, additive Gaussian feature noise, stratified
// train/validation/test splits and a small CSV format.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jsbnn/errors.hpp"
#include "jsbnn/gaussian.hpp"
#include "jsbnn/loss.hpp"
#include "jsbnn/math.hpp"

namespace jsbnn {

enum class Split : std::uint8_t { train = 0, validation = 1, test = 2 };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

using SplitFractions = std::array<double, 3>;

struct Dataset {
  std::vector<Vector> features;
  std::vector<std::size_t> labels;
  std::vector<Split> split_tags;
  std::size_t n_classes = 2;

  [[nodiscard]] std::size_t size() const { return features.size(); }
  [[nodiscard]] std::size_t feature_dim() const { return features.empty() ? 0 : features.front().size(); }

  void validate() const {
    if (features.size() != labels.size() || split_tags.size() != labels.size()) {
      throw DataError("dataset: features, labels and split tags differ in length");
    }
    for (std::size_t r = 0; r < size(); ++r) {
      if (features[r].size() != feature_dim()) throw DataError("dataset: ragged feature rows");
      if (labels[r] >= n_classes) throw DataError("dataset: label out of range at row " + std::to_string(r));
    }
  }

  [[nodiscard]] std::size_t count(Split s) const {
    return static_cast<std::size_t>(std::count(split_tags.begin(), split_tags.end(), s));
  }

  [[nodiscard]] Dataset subset(Split s) const {
    Dataset out;
    out.n_classes = n_classes;
    for (std::size_t r = 0; r < size(); ++r) {
      if (split_tags[r] != s) continue;
      out.features.push_back(features[r]);
      out.labels.push_back(labels[r]);
      out.split_tags.push_back(s);
    }
    return out;
  }

  [[nodiscard]] Batch batch() const { return {features, labels}; }
  [[nodiscard]] Batch batch(Split s) const { return subset(s).batch(); }
};

struct NoiseSpec {
  double mean = 0.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Per-column (x - min) / (max - min); constant columns map to 0.
inline std::vector<Vector> minmax_normalize(std::vector<Vector> features) {
  if (features.empty()) return features;
  const std::size_t d = features.front().size();
  for (std::size_t c = 0; c < d; ++c) {
    double lo = features.front()[c], hi = lo;
    for (const auto& row : features) {
      lo = std::min(lo, row[c]);
      hi = std::max(hi, row[c]);
    }
    const double range = hi - lo;
    for (auto& row : features) row[c] = range > 0.0 ? (row[c] - lo) / range : 0.0;
  }
  return features;
}

inline Dataset minmax_normalize(Dataset ds) {
  ds.features = minmax_normalize(std::move(ds.features));
  return ds;
}

/// p_n = (255 - p) / 255.
inline Vector complement_normalize(std::span<const int> pixels) {
  Vector out(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (pixels[i] < 0 || pixels[i] > 255) {
      throw std::invalid_argument("complement_normalize: pixel " + std::to_string(pixels[i]) +
                                  " at index " + std::to_string(i) + " outside [0, 255]");
    }
    out[i] = static_cast<double>(255 - pixels[i]) / 255.0;
  }
  return out;
}

inline std::vector<int> complement_denormalize(std::span<const double> values) {
  std::vector<int> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = 255 - static_cast<int>(std::lround(values[i] * 255.0));
  }
  return out;
}

/// Adds N(mean, sigma^2) to every feature. Each split draws from its own
/// stream derived from spec.seed; values are not clipped afterwards.
inline Dataset add_noise(Dataset ds, const NoiseSpec& spec) {
  if (!(spec.sigma >= 0.0)) throw std::invalid_argument("add_noise: sigma must be >= 0");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto s : {Split::train, Split::validation, Split::test}) {
    std::mt19937_64 rng(derive_seed(spec.seed, static_cast<std::uint64_t>(s)));
    for (std::size_t r = 0; r < ds.size(); ++r) {
      if (ds.split_tags[r] != s) continue;
      for (double& x : ds.features[r]) x += spec.mean + spec.sigma * normal(rng);
    }
  }
  return ds;
}

/// Gaussian clusters around `centers` (one per class). Class 0 is the
/// majority ("negative") class with round(n_per_class * bias_ratio) rows; every
/// other class has n_per_class rows. All rows are tagged train.
inline Dataset synth_clusters(std::size_t n_per_class, const std::vector<Vector>& centers, double spread,
                              double bias_ratio, std::uint64_t seed,
                              std::vector<std::string>* warnings = nullptr) {
  if (!(bias_ratio > 0.0)) throw std::invalid_argument("synth_clusters: bias_ratio must be > 0");
  if (centers.size() < 2) throw std::invalid_argument("synth_clusters: need at least two centers");
  if (!(spread >= 0.0)) throw std::invalid_argument("synth_clusters: spread must be >= 0");
  const std::size_t d = centers.front().size();
  for (const auto& c : centers) {
    if (c.size() != d || d == 0) throw std::invalid_argument("synth_clusters: centers must share a dimension");
  }
  if (warnings) {
    for (std::size_t a = 0; a < centers.size(); ++a) {
      for (std::size_t b = a + 1; b < centers.size(); ++b) {
        if (centers[a] == centers[b]) {
          warnings->push_back("synth_clusters: classes " + std::to_string(a) + " and " + std::to_string(b) +
                              " share a center");
        }
      }
    }
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.n_classes = centers.size();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const std::size_t count =
        c == 0 ? static_cast<std::size_t>(std::llround(static_cast<double>(n_per_class) * bias_ratio)) : n_per_class;
    for (std::size_t r = 0; r < count; ++r) {
      Vector x(d);
      for (std::size_t k = 0; k < d; ++k) x[k] = centers[c][k] + spread * normal(rng);
      ds.features.push_back(std::move(x));
      ds.labels.push_back(c);
      ds.split_tags.push_back(Split::train);
    }
  }
  return ds;
}

/// (outer_train, inner_train) nested 2-way splits as 3-way fractions: e.g.
/// 80/20 test holdout, then 80/20 train/validation gives {0.64, 0.16, 0.2}.
inline SplitFractions nested_split_fractions(double outer_train, double inner_train) {
  return {outer_train * inner_train, outer_train * (1.0 - inner_train), 1.0 - outer_train};
}

namespace detail {

/// Largest-remainder rounding of fractions * total to integers summing to total.
inline std::array<std::size_t, 3> apportion(const SplitFractions& f, std::size_t total) {
  std::array<std::size_t, 3> out{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const double exact = f[s] * static_cast<double>(total);
    out[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[s] = exact - static_cast<double>(out[s]);
    used += out[s];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; used < total; ++k, ++used) ++out[order[k % 3]];
  return out;
}

}  // namespace detail

/// Stratified seeded split. Global split sizes are the largest-remainder
/// rounding of fractions * N; each class receives floor or ceil of its own
/// share in every split.
inline Dataset split(Dataset ds, const SplitFractions& fractions, std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw std::invalid_argument("split: fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split: fractions must sum to 1");

  const std::size_t k = ds.n_classes;
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    if (ds.labels[r] >= k) throw DataError("split: label out of range at row " + std::to_string(r));
    members[ds.labels[r]].push_back(r);
  }

  // Per-class floors, then hand out the per-class remainders so the global
  // sizes come out exactly (at most one extra per class and split).
  const auto global = detail::apportion(fractions, ds.size());
  std::vector<std::array<std::size_t, 3>> counts(k);
  std::vector<std::array<double, 3>> rem(k);
  std::vector<std::size_t> extra(k, 0);
  std::array<long, 3> need{};
  for (std::size_t s = 0; s < 3; ++s) need[s] = static_cast<long>(global[s]);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t used = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      const double exact = fractions[s] * static_cast<double>(members[c].size());
      counts[c][s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      rem[c][s] = exact - static_cast<double>(counts[c][s]);
      used += counts[c][s];
      need[s] -= static_cast<long>(counts[c][s]);
    }
    extra[c] = members[c].size() - used;
  }
  std::vector<std::size_t> class_order(k);
  std::iota(class_order.begin(), class_order.end(), 0);
  std::stable_sort(class_order.begin(), class_order.end(),
                   [&](std::size_t a, std::size_t b) { return extra[a] > extra[b]; });
  for (std::size_t c : class_order) {
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (need[a] != need[b]) return need[a] > need[b];
      return rem[c][a] > rem[c][b];
    });
    for (std::size_t e = 0; e < extra[c]; ++e) {
      const std::size_t s = order[e];
      if (need[s] <= 0) throw std::logic_error("split: could not balance stratified split sizes");
      ++counts[c][s];
      --need[s];
    }
  }

  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < k; ++c) {
    auto& idx = members[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t pos = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t j = 0; j < counts[c][s]; ++j) ds.split_tags[idx[pos++]] = static_cast<Split>(s);
    }
  }
  return ds;
}

struct CsvSchema {
  std::size_t n_classes = 0;  // 0: infer as max(label) + 1
};

/// Reads `f0,...,fk,label` CSV. Errors carry 1-based line numbers.
inline Dataset load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in || std::filesystem::is_directory(path)) throw DataError("cannot open '" + path + "'");
  auto split_line = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };

  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    header = split_line(line);
    break;
  }
  if (header.empty()) throw DataError("'" + path + "': empty file");
  for (auto& h : header) h = trim(h);
  if (header.size() < 2 || header.back() != "label") {
    throw DataError("'" + path + "' line " + std::to_string(line_no) + ": header must be f0..fk,label");
  }
  for (std::size_t c = 0; c + 1 < header.size(); ++c) {
    if (header[c] != "f" + std::to_string(c)) {
      throw DataError("'" + path + "' line " + std::to_string(line_no) + ": expected column f" +
                      std::to_string(c) + ", found '" + header[c] + "'");
    }
  }
  const std::size_t d = header.size() - 1;

  Dataset ds;
  std::size_t max_label = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    const auto cells = split_line(line);
    const std::string where = "'" + path + "' line " + std::to_string(line_no);
    if (cells.size() != d + 1) throw DataError(where + ": expected " + std::to_string(d + 1) + " columns");
    Vector x(d);
    for (std::size_t c = 0; c < d; ++c) {
      const std::string cell = trim(cells[c]);
      char* end = nullptr;
      x[c] = std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size() || !std::isfinite(x[c])) {
        throw DataError(where + ": non-numeric value '" + cell + "' in column f" + std::to_string(c));
      }
    }
    const std::string lab = trim(cells[d]);
    char* end = nullptr;
    const long label = std::strtol(lab.c_str(), &end, 10);
    if (lab.empty() || end != lab.c_str() + lab.size() || label < 0) {
      throw DataError(where + ": label '" + lab + "' is not a non-negative integer");
    }
    if (schema.n_classes > 0 && static_cast<std::size_t>(label) >= schema.n_classes) {
      throw DataError(where + ": label " + lab + " unknown to schema with " + std::to_string(schema.n_classes) +
                      " classes");
    }
    max_label = std::max(max_label, static_cast<std::size_t>(label));
    ds.features.push_back(std::move(x));
    ds.labels.push_back(static_cast<std::size_t>(label));
    ds.split_tags.push_back(Split::train);
  }
  if (ds.size() == 0) throw DataError("'" + path + "': dataset has no rows");
  ds.n_classes = schema.n_classes > 0 ? schema.n_classes : std::max<std::size_t>(2, max_label + 1);
  return ds;
}

inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (std::size_t c = 0; c < ds.feature_dim(); ++c) out << 'f' << c << ',';
  out << "label\n";
  out << std::setprecision(17);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (double x : ds.features[r]) out << x << ',';
    out << ds.labels[r] << '\n';
  }
}

inline nlohmann::json dataset_manifest(std::uint64_t seed, const NoiseSpec& noise, double bias_ratio,
                                       const SplitFractions& fractions, const Dataset& ds) {
  nlohmann::json j;
  j["seed"] = seed;
  j["noise"] = {{"mean", noise.mean}, {"sigma", noise.sigma}, {"seed", noise.seed}};
  j["bias_ratio"] = bias_ratio;
  j["split_fractions"] = fractions;
  j["rows"] = ds.size();
  j["n_classes"] = ds.n_classes;
  j["split_sizes"] = {{"train", ds.count(Split::train)},
                      {"validation", ds.count(Split::validation)},
                      {"test", ds.count(Split::test)}};
  return j;
}

}  // namespace jsbnn
