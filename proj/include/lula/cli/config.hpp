#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lula/data.hpp"
#include "lula/error.hpp"
#include "lula/laplace.hpp"
#include "lula/lula.hpp"
#include "lula/training.hpp"

namespace lula::cli {

/// Invalid configuration: unknown section or key, unparsable value, or an
/// inconsistent combination. Maps to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct DataConfig {
  /// two_moons | toy_regression | csv
  std::string source;
  std::size_t size = 0;
  double noise = 0.0;
  double x_low = 0.0;
  double x_high = 0.0;
  std::filesystem::path csv_path;
  CsvOptions csv;
  SplitSpec split;
  bool standardize = false;
  std::uint64_t seed = 0;
};

struct ModelConfig {
  std::vector<Eigen::Index> hidden;
  Activation activation = Activation::relu;
  /// gaussian | categorical | binary | auto (from the data task)
  std::string likelihood;
  double noise_precision = 1.0;
};

struct LaplaceConfig {
  CurvatureKind curvature = CurvatureKind::kfac_last_layer;
  Subset subset = Subset::last_layer;
  /// Empty means tune over `prior_grid`.
  std::optional<double> prior_precision;
  TuneObjective objective = TuneObjective::val_log_likelihood;
  std::vector<double> prior_grid;
  PredictConfig predict;
};

/// Outlier source for LULA training and evaluation: uniform_noise, permute,
/// blur or contrast.
struct OutlierConfig {
  std::string kind;
  std::size_t count = 0;
  double low = 0.0;
  double high = 0.0;
};

struct LulaSectionConfig {
  /// Empty means grid search over `unit_grid`.
  std::optional<Eigen::Index> units;
  std::vector<Eigen::Index> unit_grid;
  std::optional<double> init_std;
  LulaTrainConfig train;
  OutlierConfig outliers;
};

struct EvalConfig {
  std::vector<std::string> ood;
  double noise_low = 0.0;
  double noise_high = 0.0;
  std::size_t repeats = 10;
  std::uint64_t seed = 0;
};

struct DemoConfig {
  std::size_t moons_size = 0;
  double moons_noise = 0.0;
  std::vector<Eigen::Index> moons_hidden;
  int moons_epochs = 0;
  double moons_learning_rate = 0.0;
  double moons_weight_decay = 0.0;
  double moons_prior_precision = 1.0;
  Eigen::Index moons_units = 0;
  int moons_lula_epochs = 0;
  double moons_outlier_box = 0.0;
  std::size_t regression_size = 0;
  double regression_noise = 0.0;
  Eigen::Index regression_hidden = 0;
  int regression_epochs = 0;
  double regression_learning_rate = 0.0;
  double regression_weight_decay = 0.0;
  double regression_prior_precision = 1.0;
  Eigen::Index regression_units = 0;
  int regression_lula_epochs = 0;
  double regression_outlier_box = 0.0;
  double ring_min = 0.0;
  double ring_max = 0.0;
  std::size_t ring_points = 0;
  std::size_t grid_resolution = 0;
  double grid_half_width = 0.0;
  LulaTrainConfig::GradientMethod gradient = LulaTrainConfig::GradientMethod::analytic;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  LaplaceConfig laplace;
  LulaSectionConfig lula;
  EvalConfig eval;
  DemoConfig demo;
};

/// Built-in defaults (the values listed by reference_config()).
ExperimentConfig default_config();

/// INI-style text: `[section]` headers, `key = value` lines, `#` or `;`
/// comments. Lists are comma separated. Unknown sections and keys are rejected.
ExperimentConfig parse_config(std::string_view text, std::string_view origin = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Overrides every seed in the configuration with values derived from `seed`.
void override_seed(ExperimentConfig& config, std::uint64_t seed);

/// Commented reference file with every key and its default.
std::string reference_config();

}  // namespace lula::cli
