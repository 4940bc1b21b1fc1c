#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lula/data.hpp"
#include "lula/laplace.hpp"
#include "lula/network.hpp"
#include "lula/training.hpp"

namespace lula {

using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskVector = Eigen::Matrix<bool, Eigen::Dynamic, 1>;

/// Record of the LULA units added to a network.
///
/// For hidden layer l (1-based) with n_l original and m_l added units the
/// augmented weight is
///     [ W_map  0 ]
///     [ W_hat  0 ]   of shape (n_l + m_l) x (n_{l-1} + m_{l-1}),
/// the bias is [b_map; b_hat], and the output layer becomes [W_map 0] with
/// its bias unchanged. Only W_hat and b_hat are free; masks are true exactly there.
struct LulaAugmentation {
  /// m_1 ... m_{L-1}.
  std::vector<Eigen::Index> unit_counts;
  /// n_0 ... n_L of the network before augmentation.
  std::vector<Eigen::Index> original_dims;
  /// One per layer of the augmented network.
  std::vector<Mask> weight_masks;
  std::vector<MaskVector> bias_masks;
  /// Standard deviation used for the free blocks of each hidden layer.
  std::vector<double> init_std;

  /// 1.0 on free positions, 0.0 elsewhere, in the network's flattening order.
  Vector flat_mask() const;
  /// Flattened indices of the free parameters, ascending.
  std::vector<Eigen::Index> free_indices() const;
  Eigen::Index free_count() const;
};

struct Augmented {
  Network net;
  LulaAugmentation aug;
};

/// Default prior scale of the free blocks: 0.1 * sqrt(2 / fan_in).
double default_init_std(Eigen::Index fan_in);

/// Adds `counts[l-1]` LULA units to every hidden layer l and draws the free
/// blocks from N(0, init_std^2); `init_std` overrides the per-layer default.
/// Throws InvalidArgument unless counts has exactly L-1 non-negative entries.
Augmented augment(const Network& net, const std::vector<Eigen::Index>& counts, Rng& rng,
                  std::optional<double> init_std = std::nullopt);

/// Counts vector placing `units` on the penultimate layer only.
std::vector<Eigen::Index> penultimate_counts(const Network& net, Eigen::Index units);

/// Zeroes every entry outside the free blocks.
Vector mask_gradient(const Vector& grads, const LulaAugmentation& aug);
Gradients mask_gradient(const Gradients& grads, const LulaAugmentation& aug);

/// True when every original (MAP) entry of `augmented` equals `original`
/// bitwise and every structural-zero block is exactly zero.
bool verify_structure(const Network& original, const Network& augmented,
                      const LulaAugmentation& aug);

/// Largest absolute output difference between the two networks on `count`
/// inputs drawn from N(0, scale^2 I).
double output_preservation_gap(const Network& original, const Network& augmented, Rng& rng,
                               std::size_t count, double scale = 3.0);

struct VarianceConfig {
  enum class Evaluator { mc, linearized };
  Evaluator evaluator = Evaluator::linearized;
  std::size_t samples = 100;
  std::uint64_t seed = 0;
};

std::string_view to_string(VarianceConfig::Evaluator evaluator);
VarianceConfig::Evaluator evaluator_from_string(std::string_view name);

/// Total output variance nu(x) = sum_i var f_i(x) for each row of x. The MC
/// evaluator uses (1/S) sum f^2 - ((1/S) sum f)^2 with the same S draws for
/// every row.
Vector total_variance_batch(const Network& net, const LaplacePosterior& post, const Matrix& x,
                            const VarianceConfig& config);
double total_variance(const Network& net, const LaplacePosterior& post, const Vector& x,
                      const VarianceConfig& config);

/// mean nu over in_batch minus mean nu over out_batch.
double lula_objective(const Network& net, const LaplacePosterior& post, const Matrix& in_batch,
                      const Matrix& out_batch, const VarianceConfig& config);

struct LulaTrainConfig {
  enum class GradientMethod { finite_difference, analytic };
  double learning_rate = 1e-2;
  int epochs = 20;
  TrainConfig::Optimizer optimizer = TrainConfig::Optimizer::adam;
  VarianceConfig variance;
  GradientMethod gradient = GradientMethod::finite_difference;
  /// Posterior refit each epoch over the augmented last layer.
  CurvatureKind curvature = CurvatureKind::diag_ggn;
  /// Inliers / outliers drawn per epoch; 0 uses the whole set.
  std::size_t in_batch = 0;
  std::size_t out_batch = 0;
  std::uint64_t seed = 0;
};

std::string_view to_string(LulaTrainConfig::GradientMethod method);
LulaTrainConfig::GradientMethod gradient_method_from_string(std::string_view name);

/// Problem definition of one LULA objective evaluation.
struct LulaProblem {
  /// Data the last-layer posterior is refit on.
  const Dataset* fit = nullptr;
  LossKind loss;
  double prior_precision = 1.0;
  CurvatureKind curvature = CurvatureKind::diag_ggn;
  VarianceConfig variance;
};

/// Refits the last-layer posterior at the network's current parameters and
/// evaluates the objective.
double lula_loss(const Network& net, const LulaProblem& problem, const Matrix& in_batch,
                 const Matrix& out_batch);

/// Central differences over the free parameters with step 1e-4 * max(1, |p|);
/// zero elsewhere. Returned in the network's flattening order.
Vector lula_gradient_fd(const Network& net, const LulaAugmentation& aug,
                        const LulaProblem& problem, const Matrix& in_batch,
                        const Matrix& out_batch);

/// Exact gradient for the diag_ggn posterior with the linearized evaluator,
/// including the dependence of the refit posterior on the free parameters.
/// Unmasked; in the network's flattening order.
Vector lula_gradient_analytic(const Network& net, const LulaProblem& problem,
                              const Matrix& in_batch, const Matrix& out_batch);

struct LulaTrainResult {
  Network net;
  /// Objective value at the start of each epoch.
  std::vector<double> history;
  /// Last-layer posterior refit after the final update.
  std::optional<LaplacePosterior> posterior;
};

/// Masked training of the free parameters. `curvature_data` (defaults to
/// in_data) is the set the posterior is refit on every epoch.
LulaTrainResult train_lula(const Network& net, const LulaAugmentation& aug,
                           const Dataset& in_data, const Dataset& out_data, const LossKind& loss,
                           double prior_precision, const LulaTrainConfig& config,
                           const Dataset* curvature_data = nullptr);

struct UnitScore {
  Eigen::Index units = 0;
  /// |1 - MMC_in| + |1/k - MMC_out|
  double score = 0.0;
  bool ok = false;
};

struct GridSearchConfig {
  /// Posterior used to score each trained candidate.
  CurvatureKind eval_curvature = CurvatureKind::kfac_last_layer;
  PredictConfig predict;
  std::optional<double> init_std;
  std::uint64_t seed = 0;
};

struct GridSearchResult {
  Eigen::Index best = 0;
  std::vector<UnitScore> scores;
  std::vector<std::string> warnings;
};

std::vector<Eigen::Index> default_unit_grid();

/// Smallest score among successful candidates, ties to the smaller unit count.
Eigen::Index select_units(const std::vector<UnitScore>& scores);

/// Trains LULA (penultimate layer) for each candidate count on the validation
/// in/out sets and scores the validation MMCs. Candidates whose posterior is
/// not positive definite are skipped with a warning.
GridSearchResult grid_search_units(const Network& net, const std::vector<Eigen::Index>& candidates,
                                   const Dataset& curvature_data, const Dataset& in_val,
                                   const Dataset& out_val, const LossKind& loss,
                                   double prior_precision, const LulaTrainConfig& train_config,
                                   const GridSearchConfig& search_config);

/// Structured-text record of an augmentation (counts, dims and masks).
void save_augmentation(const LulaAugmentation& aug, const std::filesystem::path& path);
LulaAugmentation load_augmentation(const std::filesystem::path& path);

}  // namespace lula
