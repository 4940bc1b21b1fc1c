#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "lula/data.hpp"
#include "lula/network.hpp"

namespace lula {

/// Negative log-likelihood family. Additive normalization constants are dropped:
///   gaussian_nll:   (beta/2) * ||y - f||^2
///   categorical_ce: -log softmax(f)_y
///   binary_ce:      -[y log sigma(f) + (1-y) log(1 - sigma(f))], single logit output
struct LossKind {
  enum class Kind { gaussian_nll, categorical_ce, binary_ce };
  Kind kind = Kind::gaussian_nll;
  double noise_precision = 1.0;

  static LossKind gaussian(double beta = 1.0) { return {Kind::gaussian_nll, beta}; }
  static LossKind categorical() { return {Kind::categorical_ce, 1.0}; }
  static LossKind binary() { return {Kind::binary_ce, 1.0}; }

  bool is_classification() const { return kind != Kind::gaussian_nll; }
};

std::string_view to_string(LossKind::Kind kind);
LossKind::Kind loss_kind_from_string(std::string_view name);

struct LossResult {
  double value = 0.0;
  /// Gradient in the network's flattened parameter order.
  Vector gradient;
};

/// sum_i -log p(y_i | f(x_i)) + (prior_precision/2) * ||theta||^2 over the batch.
/// Throws NumericError when the value is not finite.
LossResult map_loss(const Network& net, const Dataset& batch, const LossKind& loss,
                    double prior_precision);

/// Per-row negative log-likelihood and its gradient with respect to the outputs.
/// `outputs` is m x k; `rows` selects the dataset rows the outputs belong to.
double nll_and_output_grad(const Matrix& outputs, const Dataset& data,
                           const std::vector<std::size_t>& rows, const LossKind& loss,
                           Matrix* output_grad);

/// Output-space Hessian of the negative log-likelihood at one output vector:
/// beta*I (gaussian), diag(p) - p p^T (categorical), sigma(1-sigma) (binary).
Matrix output_hessian(const LossKind& loss, const Vector& output);

/// Checks that the dataset's targets fit the loss and the network output width.
void check_compatible(const Network& net, const Dataset& data, const LossKind& loss);

struct TrainConfig {
  enum class Optimizer { sgd, adam };
  Optimizer optimizer = Optimizer::adam;
  double learning_rate = 1e-3;
  /// SGD only.
  double momentum = 0.9;
  int epochs = 100;
  std::size_t batch_size = 32;
  /// Prior precision lambda of the MAP objective.
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

std::string_view to_string(TrainConfig::Optimizer opt);
TrainConfig::Optimizer optimizer_from_string(std::string_view name);

/// Plain SGD with momentum, or Adam (beta1 0.9, beta2 0.999, eps 1e-8).
class FirstOrderOptimizer {
 public:
  FirstOrderOptimizer(TrainConfig::Optimizer kind, double learning_rate, double momentum = 0.9);

  /// params -= update(grad)
  void step(Vector& params, const Vector& grad);

 private:
  TrainConfig::Optimizer kind_;
  double lr_;
  double momentum_;
  long t_ = 0;
  Vector m_;
  Vector v_;
};

/// Random initialization: weights ~ N(0, 2/fan_in) for relu/selu layers and
/// N(0, 1/fan_in) otherwise; zero biases. `dims` = (n_0, ..., n_L); the output
/// layer is always identity.
Network init_network(const std::vector<Eigen::Index>& dims, Activation hidden, Rng& rng);

struct TrainResult {
  Network net;
  /// Mean minibatch objective per epoch.
  std::vector<double> history;
};

/// Minibatch MAP training. Each step minimizes the rescaled objective
///   (1/|B|) * sum_{i in B} nll_i + lambda/(2m) * ||theta||^2,
/// which has the same minimizer as map_loss on the whole training set.
TrainResult train_map(const Network& net, const Dataset& data, const LossKind& loss,
                      const TrainConfig& config);

/// Fraction of rows whose argmax output matches the label (threshold 0 for a
/// single logit).
double accuracy(const Network& net, const Dataset& data);

}  // namespace lula
