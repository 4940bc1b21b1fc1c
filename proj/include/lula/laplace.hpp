#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "lula/data.hpp"
#include "lula/network.hpp"
#include "lula/training.hpp"

namespace lula {

enum class CurvatureKind { full_ggn, diag_ggn, kfac_last_layer };
enum class Subset { all_layers, last_layer };

std::string_view to_string(CurvatureKind kind);
CurvatureKind curvature_kind_from_string(std::string_view name);
std::string_view to_string(Subset subset);
Subset subset_from_string(std::string_view name);

/// Default dimension cap for dense full_ggn curvature.
inline constexpr Eigen::Index kFullGgnCap = 5000;

// Last-layer parameters are ordered row-major over the bias-augmented matrix
// [W^(L) | b^(L)] (k x (n_{L-1} + 1)): output unit i contributes its n_{L-1}
// weights followed by its bias. Features carry a trailing constant 1.

Vector last_layer_params(const Network& net);
void set_last_layer_params(Network& net, const Vector& params);
/// m x (n_{L-1} + 1) penultimate activations with the constant-1 column appended.
Matrix last_layer_features(const Network& net, const Matrix& x);
/// Flattened parameters of the subset (network order for all_layers).
Vector subset_params(const Network& net, Subset subset);

/// Data term of the loss curvature (generalized Gauss-Newton), without the prior.
///  full_ggn: H = sum_x J_x^T Lambda_x J_x
///  diag_ggn: diag(H)
///  kfac_last_layer: G = sum_x Lambda_x (k x k), A = mean_x hbar hbar^T, so that
///                   kron(G, A) approximates the last-layer H.
struct Curvature {
  CurvatureKind kind = CurvatureKind::diag_ggn;
  Subset subset = Subset::last_layer;
  Matrix full;
  Vector diag;
  Matrix kfac_g;
  Matrix kfac_a;
  Eigen::Index data_count = 0;

  Eigen::Index dim() const;
  /// Dense data-term matrix (diag/kron expanded); for tests and small problems.
  Matrix dense() const;
};

Curvature fit_curvature(const Network& net, const Dataset& data, const LossKind& loss,
                        CurvatureKind kind, Subset subset, Eigen::Index full_cap = kFullGgnCap);

/// Gaussian N(mean, Sigma) with Sigma = (H_data + lambda I)^{-1}.
///
/// Kronecker posteriors keep eigendecompositions G = U diag(g) U^T and
/// A = V diag(a) V^T, so that kron(G, A) + lambda I = (U x V) diag(g_i a_j + lambda) (U x V)^T
/// is represented exactly. Sampling uses the matrix-normal form
/// W = M + U (Z .* S) V^T with S_ij = (g_i a_j + lambda)^{-1/2}.
class LaplacePosterior {
 public:
  Subset subset() const { return subset_; }
  CurvatureKind kind() const { return kind_; }
  const Vector& mean() const { return mean_; }
  double prior_precision() const { return prior_precision_; }
  Eigen::Index dim() const { return mean_.size(); }
  /// Diagonal shift added by the jitter policy (0 when none was needed).
  double jitter() const { return jitter_; }

  /// g^T Sigma g.
  double quadratic_form(const Vector& g) const;
  Vector marginal_variances() const;
  /// Dense Sigma; intended for small problems and tests.
  Matrix covariance() const;
  std::vector<Vector> sample(Rng& rng, std::size_t count) const;

 private:
  friend LaplacePosterior build_posterior(const Curvature&, const Vector&, double);

  struct Full {
    Matrix precision_chol;
  };
  struct Diag {
    Vector precision;
  };
  struct Kron {
    Matrix g_vectors;
    Matrix a_vectors;
    /// precision eigenvalues, rows index G's eigenpairs, columns A's.
    Matrix eigen_precision;
  };

  Subset subset_ = Subset::last_layer;
  CurvatureKind kind_ = CurvatureKind::diag_ggn;
  Vector mean_;
  double prior_precision_ = 0.0;
  double jitter_ = 0.0;
  std::variant<Full, Diag, Kron> rep_;
};

/// Throws NotPositiveDefinite when H_data + lambda I stays singular after jitter.
LaplacePosterior build_posterior(const Curvature& curvature, const Vector& mean,
                                 double prior_precision);

/// Convenience: fit_curvature + build_posterior at the network's current parameters.
LaplacePosterior fit_laplace(const Network& net, const Dataset& data, const LossKind& loss,
                             CurvatureKind kind, Subset subset, double prior_precision);

/// S flattened parameter vectors of the posterior's subset.
std::vector<Vector> sample_params(const LaplacePosterior& post, Rng& rng, std::size_t count);

/// Per-output linearized variance v_i(x) = g_i^T Sigma g_i at a single input.
Vector linearized_variance(const Network& net, const LaplacePosterior& post, const Vector& x);
/// Row i holds linearized_variance at x.row(i).
Matrix linearized_variance_batch(const Network& net, const LaplacePosterior& post,
                                 const Matrix& x);

/// sigma(f / sqrt(1 + pi/8 * v)); throws InvalidArgument for v < 0.
double probit_predict_binary(double f_map, double variance);

/// Network outputs under S posterior draws (one m x k matrix per draw).
std::vector<Matrix> sample_outputs(const Network& net, const LaplacePosterior& post,
                                   const Matrix& x, Rng& rng, std::size_t count);

struct PredictConfig {
  enum class Method { mc, probit_linearized };
  Method method = Method::mc;
  std::size_t samples = 100;
  std::uint64_t seed = 0;
};

std::string_view to_string(PredictConfig::Method method);
PredictConfig::Method predict_method_from_string(std::string_view name);

/// Predictive summary of a batch.
/// Classification: `probs` (m x C, C = 2 for a single logit) lies on the simplex.
/// Regression: `mean`, `epistemic_var` (posterior spread of f) and `total_var`
/// (epistemic + 1/beta), each m x k. Sample variances use the 1/S normalization.
struct Prediction {
  Matrix probs;
  Matrix mean;
  Matrix epistemic_var;
  Matrix total_var;
};

/// Monte-Carlo predictive: average of softmax / sigmoid over posterior draws, or
/// sample mean and variance for regression.
Prediction mc_predict(const Network& net, const LaplacePosterior& post, const Matrix& x,
                      const PredictConfig& config, const LossKind& loss);

/// Dispatches on config.method. probit_linearized supports binary classification
/// and regression (mean = MAP output, epistemic = linearized variance).
Prediction predictive(const Network& net, const LaplacePosterior& post, const Matrix& x,
                      const PredictConfig& config, const LossKind& loss);

/// Mean predictive log-likelihood of labeled data (full Gaussian density for
/// regression, log of the class probability for classification).
double predictive_log_likelihood(const Prediction& pred, const Dataset& data,
                                 const LossKind& loss);

/// 10^-4 ... 10^4 in 17 log-spaced points.
std::vector<double> default_prior_grid();

enum class TuneObjective { val_log_likelihood, ood_mmc };
std::string_view to_string(TuneObjective objective);
TuneObjective tune_objective_from_string(std::string_view name);

struct TuneCandidate {
  double prior_precision = 0.0;
  /// Validation log-likelihood, or |1 - MMC_in| + |1/k - MMC_out|.
  double score = 0.0;
  bool ok = false;
};

struct TuneResult {
  double best = 0.0;
  std::vector<TuneCandidate> candidates;
};

/// Index of the best successful candidate: largest score when `maximize`,
/// otherwise smallest; ties go to the earliest. Throws NotPositiveDefinite when
/// no candidate succeeded.
std::size_t select_candidate(const std::vector<TuneCandidate>& candidates, bool maximize);

/// Grid search over the prior precision for a fixed curvature and mean.
/// `out_data` is required for ood_mmc.
TuneResult tune_prior_precision(const Network& net, const Curvature& curvature,
                                const Vector& mean, const Dataset& val, TuneObjective objective,
                                const std::vector<double>& grid, const PredictConfig& config,
                                const LossKind& loss, const Dataset* out_data = nullptr);

}  // namespace lula
