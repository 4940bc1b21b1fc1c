#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lula/numerics.hpp"

namespace lula {

enum class Task { regression, classification };
enum class Role { train, val, test, in, out };

std::string_view to_string(Role role);

/// Per-feature statistics applied by standardize().
struct Standardization {
  Vector mean;
  Vector std;
};

/// Feature matrix plus targets.
///
/// Regression datasets carry `targets` (m x k); classification datasets carry
/// `labels` in [0, num_classes). Unlabeled sets (OOD, noise) have neither.
struct Dataset {
  Matrix features;
  Matrix targets;
  std::vector<int> labels;
  int num_classes = 0;
  Task task = Task::regression;
  Role role = Role::train;
  std::optional<Standardization> standardization;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
  bool labeled() const { return !labels.empty() || targets.rows() > 0; }

  /// Rows selected by index, preserving every other field.
  Dataset subset(const std::vector<std::size_t>& rows) const;
  /// Throws DimensionMismatch / InvalidArgument when the invariants are violated.
  void validate() const;
};

/// Two interleaved unit half-circles: class 0 on (cos t, sin t), class 1 on
/// (1 - cos t, 0.5 - sin t) for t in [0, pi], plus isotropic Gaussian noise.
/// Class sizes are ceil(m/2) and floor(m/2); rows are shuffled.
Dataset gen_two_moons(std::size_t m, double noise_std, std::uint64_t seed);

/// 1D regression toy: x uniform on two disjoint clusters, the 10-40% and 60-90%
/// stretches of [x_low, x_high], y = sin(2x) + N(0, noise_std^2).
Dataset gen_toy_regression(std::size_t m, double x_low, double x_high, double noise_std,
                           std::uint64_t seed);

enum class OodKind { permute, blur, contrast };

std::string_view to_string(OodKind kind);
OodKind ood_kind_from_string(std::string_view name);

/// Constants of the outlier synthesis.
///  permute: independent random permutation of each row's coordinates.
///  blur: box filter of width `blur_width` along the feature vector with
///        replicated edges, applied `blur_passes` times.
///  contrast: x <- c * (x - row mean) + row mean, c ~ U[contrast_low, contrast_high].
struct OodParams {
  int blur_width = 3;
  int blur_passes = 2;
  double contrast_low = 0.05;
  double contrast_high = 0.3;
};

/// Unlabeled outlier set with role `out` and the same shape as `in_data`.
Dataset synthesize_ood(const Dataset& in_data, OodKind kind, Rng& rng,
                       const OodParams& params = {});

/// m x n entries uniform on [low, high], multiplied by `scale`.
Dataset gen_uniform_noise(std::size_t m, std::size_t n, double low, double high,
                          std::uint64_t seed, double scale = 1.0);

struct StandardizedSplit {
  Dataset train;
  std::vector<Dataset> others;
  Standardization stats;
};

/// Feature standardization with the training set's mean and population standard
/// deviation. Zero-variance features keep std = 1.
StandardizedSplit standardize(const Dataset& train, const std::vector<Dataset>& others);
Dataset apply_standardization(const Dataset& data, const Standardization& stats);
/// Inverse of apply_standardization(); clears the recorded statistics.
Dataset unstandardize(const Dataset& data);

struct SplitSpec {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
  std::uint64_t seed = 0;
};

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Shuffled split. Sizes: round(train*m), round(val*m), remainder to test.
Splits split(const Dataset& data, const SplitSpec& spec);

struct CsvOptions {
  /// Column name when the file has a header, otherwise a zero-based index.
  std::string target_column;
  bool has_header = true;
  Task task = Task::regression;
};

/// Numeric CSV ingestion. Features are all non-target columns in file order.
/// Parse errors name the 1-based file line and column.
Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options);

}  // namespace lula
