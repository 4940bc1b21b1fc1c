#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "lula/cli/config.hpp"

namespace lula::cli {

/// Stage order of every per-stage array: MAP, LA, LA+LULA.
inline constexpr std::array<const char*, 3> kStageNames = {"map", "la", "lula"};

struct MoonsDemoResult {
  double test_accuracy = 0.0;
  /// Argmax labels of the MAP and the LULA-augmented networks on the test set.
  std::vector<int> map_labels;
  std::vector<int> lula_labels;
  std::vector<double> lula_history;
  /// Lattice points (r x 2) and the max confidence of each stage there.
  Matrix lattice;
  std::array<Vector, 3> lattice_confidence;
  std::array<double, 3> ring_mmc{};
  std::array<double, 3> test_mmc{};
};

struct RegressionDemoResult {
  /// Grid inputs in original units and predictive mean / std per stage.
  Vector grid;
  std::array<Vector, 3> grid_mean;
  std::array<Vector, 3> grid_std;
  std::vector<double> lula_history;
  /// Mean predictive standard deviation (epistemic + noise).
  std::array<double, 3> test_std{};
  std::array<double, 3> outlier_std{};
};

/// MAP -> last-layer LA -> LA+LULA on two moons, configured by [demo], [train],
/// [laplace] and [lula].
MoonsDemoResult run_moons_demo(const ExperimentConfig& config);

/// Same pipeline on the 1D toy regression with standardized inputs.
RegressionDemoResult run_regression_demo(const ExperimentConfig& config);

/// Writes the six stage grids and summary.txt into `dir`; returns the file names.
std::vector<std::string> write_demo_outputs(const MoonsDemoResult& moons,
                                            const RegressionDemoResult& regression,
                                            const std::filesystem::path& dir);

/// Shortest round-trip decimal form; identical across runs and platforms.
std::string format_number(double value);

}  // namespace lula::cli
