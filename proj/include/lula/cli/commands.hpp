#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string_view>

#include "lula/cli/config.hpp"

namespace lula::cli {

enum ExitCode : int { kSuccess = 0, kRuntimeFailure = 1, kConfigError = 2 };

struct CommandOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> model;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
};

/// Train, validation and test sets plus the likelihood and layer widths the
/// configuration implies.
struct PreparedData {
  Dataset train;
  Dataset val;
  Dataset test;
  LossKind loss;
  std::vector<Eigen::Index> dims;
};

PreparedData prepare_data(const ExperimentConfig& config);

/// Outlier set of `kind` (uniform_noise, permute, blur, contrast) shaped like
/// `reference`. `count` = 0 uses reference.size(); otherwise the synthesized
/// kinds cycle through the reference rows.
Dataset make_outliers(std::string_view kind, const Dataset& reference, std::size_t count,
                      double low, double high, std::uint64_t seed);

// Each command writes its files and logs progress to `log`; errors propagate.
void cmd_train(const ExperimentConfig& config, const std::filesystem::path& out, std::ostream& log);
void cmd_laplace(const ExperimentConfig& config, const std::filesystem::path& model,
                 const std::filesystem::path& out, std::ostream& log);
void cmd_lula(const ExperimentConfig& config, const std::filesystem::path& model,
              const std::filesystem::path& out, std::ostream& log);
void cmd_eval(const ExperimentConfig& config, const std::filesystem::path& model,
              const std::filesystem::path& out, std::ostream& log);
void cmd_demo_toy(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                  std::ostream& log);

/// Loads the config, dispatches `command` and maps failures to exit codes:
/// ConfigError (and missing required options) -> 2, any other error -> 1.
/// Diagnostics go to `err`.
int run_command(std::string_view command, const CommandOptions& options, std::ostream& log,
                std::ostream& err);

}  // namespace lula::cli
